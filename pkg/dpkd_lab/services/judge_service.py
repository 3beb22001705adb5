"""
External judge client using Strategy pattern; every failure degrades to an unavailable verdict
"""
import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Optional

import requests

from config import settings
from models.evaluation import JudgeVerdict

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class JudgeEndpoint:
    url: str
    token: Optional[str] = None
    timeout: float = 10.0

    @classmethod
    def from_settings(cls) -> Optional['JudgeEndpoint']:
        if not settings.judge_url:
            return None
        return cls(url=settings.judge_url, token=settings.judge_token, timeout=settings.judge_timeout)


class JudgeStrategy(ABC):
    """Abstract strategy for scoring a candidate response"""

    @abstractmethod
    def score(self, prompt: str, candidate: str, reference: str) -> JudgeVerdict:
        pass


class OfflineJudge(JudgeStrategy):
    """Stub used when no endpoint is configured"""

    def score(self, prompt: str, candidate: str, reference: str) -> JudgeVerdict:
        return JudgeVerdict.unavailable("no judge endpoint configured")


class HttpJudge(JudgeStrategy):
    """POSTs {prompt, candidate, reference} and expects {"score": number, "reason": text}"""

    def __init__(self, endpoint: JudgeEndpoint):
        self.endpoint = endpoint

    def score(self, prompt: str, candidate: str, reference: str) -> JudgeVerdict:
        headers = {'Accept': 'application/json'}
        if self.endpoint.token:
            headers['Authorization'] = f'Bearer {self.endpoint.token}'
        try:
            response = requests.post(
                self.endpoint.url,
                headers=headers,
                json={'prompt': prompt, 'candidate': candidate, 'reference': reference},
                timeout=self.endpoint.timeout,
            )
            response.raise_for_status()
        except requests.RequestException as e:
            logger.warning(f"Judge request to {self.endpoint.url} failed: {e}")
            return JudgeVerdict.unavailable(f"request failed: {e}")

        try:
            body = response.json()
            score = float(body['score'])
        except (ValueError, KeyError, TypeError) as e:
            logger.warning(f"Judge reply could not be parsed: {e}")
            return JudgeVerdict.unavailable(f"malformed reply: {e}")
        return JudgeVerdict(score=score, reason=str(body.get('reason', '')))


def build_judge(endpoint: Optional[JudgeEndpoint] = None) -> JudgeStrategy:
    if endpoint is None:
        endpoint = JudgeEndpoint.from_settings()
    if endpoint is None:
        return OfflineJudge()
    return HttpJudge(endpoint)


def judge_client(endpoint: Optional[JudgeEndpoint], prompt: str, candidate: str, reference: str) -> JudgeVerdict:
    return build_judge(endpoint).score(prompt, candidate, reference)
