import hashlib
import re
import string
import unicodedata

_SPACES = re.compile(r'\s+')
_EDGE_PUNCT = string.punctuation + '、。，（）「」'


def normalize_name(name):
    """casefold, trim, 공백 정리, 양끝 문장부호 제거"""
    text = unicodedata.normalize('NFKC', name or '')
    text = _SPACES.sub(' ', text).strip().casefold()
    return text.strip(_EDGE_PUNCT + ' ')


def squash(text):
    """영숫자만 남김. 'BGB X1', 'bgb-x1' -> 'bgbx1'"""
    return ''.join(ch for ch in normalize_name(text) if ch.isalnum())


def digest(text, length=12):
    return hashlib.sha1((text or '').encode('utf-8')).hexdigest()[:length]


def domain_of(url):
    """https://news.sim/zh/1 -> news.sim"""
    match = re.match(r'^[a-z]+://([^/]+)', url or '')
    return match.group(1).lower() if match else ''
