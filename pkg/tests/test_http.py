"""Retry and backoff behavior of the shared JSON POST helper."""

from __future__ import annotations

import pytest
import requests

from graphrag._http import post_json
from graphrag.errors import ClientError


class _Response:
    def __init__(self, status_code=200, body=None, text=""):
        self.status_code = status_code
        self._body = body if body is not None else {}
        self.text = text

    def json(self):
        if self._body is ValueError:
            raise ValueError("not json")
        return self._body


def patch_transport(monkeypatch, outcomes):
    """Each call to requests.post pops the next outcome (exception or response)."""
    calls = []

    def fake_post(url, json=None, headers=None, timeout=None):
        calls.append({"url": url, "json": json, "headers": headers, "timeout": timeout})
        outcome = outcomes.pop(0)
        if isinstance(outcome, Exception):
            raise outcome
        return outcome

    sleeps = []
    monkeypatch.setattr("graphrag._http.requests.post", fake_post)
    monkeypatch.setattr("graphrag._http.time.sleep", sleeps.append)
    return calls, sleeps


def test_success_first_try(monkeypatch):
    calls, sleeps = patch_transport(monkeypatch, [_Response(body={"ok": True})])
    assert post_json("http://svc", {"a": 1}) == {"ok": True}
    assert len(calls) == 1
    assert sleeps == []
    assert calls[0]["json"] == {"a": 1}


def test_api_key_becomes_bearer_header(monkeypatch):
    calls, _ = patch_transport(monkeypatch, [_Response(body={})])
    post_json("http://svc", {}, api_key="sk-test")
    assert calls[0]["headers"]["Authorization"] == "Bearer sk-test"


def test_connection_error_retries_then_succeeds(monkeypatch):
    calls, sleeps = patch_transport(
        monkeypatch,
        [requests.ConnectionError("refused"), _Response(body={"ok": 1})],
    )
    assert post_json("http://svc", {}) == {"ok": 1}
    assert len(calls) == 2
    assert sleeps == [0.5]  # first backoff step


def test_backoff_doubles(monkeypatch):
    calls, sleeps = patch_transport(
        monkeypatch,
        [requests.Timeout("slow"), requests.Timeout("slow"), _Response(body={})],
    )
    post_json("http://svc", {})
    assert sleeps == [0.5, 1.0]


def test_server_errors_exhaust_attempts(monkeypatch):
    calls, sleeps = patch_transport(
        monkeypatch,
        [_Response(status_code=500), _Response(status_code=502), _Response(status_code=503)],
    )
    with pytest.raises(ClientError, match="after 3 attempts"):
        post_json("http://svc", {})
    assert len(calls) == 3
    assert len(sleeps) == 2


def test_client_error_never_retries(monkeypatch):
    calls, sleeps = patch_transport(monkeypatch, [_Response(status_code=400, text="bad request")])
    with pytest.raises(ClientError, match="rejected"):
        post_json("http://svc", {})
    assert len(calls) == 1
    assert sleeps == []


def test_non_json_body_fails_immediately(monkeypatch):
    calls, _ = patch_transport(monkeypatch, [_Response(body=ValueError)])
    with pytest.raises(ClientError, match="non-JSON"):
        post_json("http://svc", {})
    assert len(calls) == 1
