"""Tiny shared HTTP helper: JSON POST with bounded retries.

Transport faults (connection errors, timeouts, 5xx) back off exponentially
and retry; anything else fails immediately. Client errors never retry since
the request itself is bad.
"""

from __future__ import annotations

import logging
import time

import requests

from .errors import ClientError

log = logging.getLogger(__name__)


def post_json(
    url: str,
    payload: dict,
    *,
    api_key: str | None = None,
    timeout: float = 30.0,
    max_attempts: int = 3,
    backoff: float = 0.5,
) -> dict:
    headers = {"Content-Type": "application/json"}
    if api_key:
        headers["Authorization"] = f"Bearer {api_key}"
    last: Exception | None = None
    for attempt in range(max_attempts):
        try:
            resp = requests.post(url, json=payload, headers=headers, timeout=timeout)
            if resp.status_code >= 500:
                raise requests.HTTPError(f"server error {resp.status_code}", response=resp)
            if resp.status_code >= 400:
                raise ClientError(f"{url} rejected request: {resp.status_code} {resp.text[:200]}")
            return resp.json()
        except (requests.ConnectionError, requests.Timeout, requests.HTTPError) as exc:
            last = exc
            if attempt + 1 < max_attempts:
                delay = backoff * (2 ** attempt)
                log.warning("transport error on %s (attempt %d/%d): %s; retrying in %.1fs",
                            url, attempt + 1, max_attempts, exc, delay)
                time.sleep(delay)
        except ValueError as exc:  # non-JSON body
            raise ClientError(f"{url} returned a non-JSON body: {exc}") from exc
    raise ClientError(f"{url} failed after {max_attempts} attempts: {last}")
