"""
Django settings for the assetscout project.

assetscout는 웹 서버가 아니라 manage.py 커맨드로 돌아가는 프로젝트라서
DB, 미들웨어, URL 설정이 없음.

For more information on this file, see
https://docs.djangoproject.com/en/5.1/topics/settings/
"""
import json
import os
from pathlib import Path

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent

# .config_secret/secret.json 이 있으면 읽고, 없으면 환경변수만 사용
SECRET_PATH = BASE_DIR / '.config_secret' / 'secret.json'
if SECRET_PATH.exists():
    with open(SECRET_PATH) as f:
        SECRET = json.loads(f.read())
else:
    SECRET = {}

# SECURITY WARNING: keep the secret key used in production secret!
SECRET_KEY = SECRET.get('DJANGO_SECRET_KEY') or os.environ.get('DJANGO_SECRET_KEY', 'assetscout-local-only')

DEBUG = True
ALLOWED_HOSTS = []


# Application definition

INSTALLED_APPS = [
    # own
    'scout',
    'agents',
    'simworld',
    'evalkit',
    'benchgen',
    # 3rd party
    'django_extensions',
]

TEMPLATES = [
    {
        'BACKEND': 'django.template.backends.django.DjangoTemplates',
        'DIRS': [BASE_DIR / 'templates'],
        'APP_DIRS': True,
        'OPTIONS': {
            # 프롬프트는 html이 아니라서 자동 이스케이프를 끔
            'autoescape': False,
        },
    },
]

# 관계형 DB를 쓰지 않음. 모든 저장소는 jsonl 파일로 남김
DATABASES = {}

LANGUAGE_CODE = 'en-us'
TIME_ZONE = 'UTC'
USE_I18N = False
USE_TZ = True


# Logging
LOG_LEVEL = os.environ.get('SCOUT_LOG_LEVEL', 'INFO')

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'plain': {
            'format': '{asctime} {levelname} {name} {message}',
            'style': '{',
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'formatter': 'plain',
        },
    },
    'loggers': {
        app: {'handlers': ['console'], 'level': LOG_LEVEL, 'propagate': False}
        for app in ('scout', 'agents', 'simworld', 'evalkit', 'benchgen')
    },
}


# Search defaults (flags > config file > 여기 기본값)
SCOUT = {
    'EPOCHS': 10,
    'M': 1,
    'K': 3,
    'C': 1.2,
    'LANGUAGES': ['en', 'zh'],
    'DEDUP_MODE': 'light',
    'DEDUP_BATCH_SIZE': 50,
    'SUMMARY_CAP': 2000,
    'SEED': 0,
    'BACKEND': 'scripted',
    'SHARE_CANDIDATES': True,
    'CALL_CEILING': None,  # epoch당 backend 호출 상한, None 이면 무제한
    'MAX_WORKERS': 8,
    'FLAT_K': 5,
    # benchgen
    'REVISION_ROUNDS': 5,
    'LEAKAGE_RETRIES': 3,
    'UNDER_RADAR_FRACTION': 1.0,
    'SEARCHES_PER_LANGUAGE': 3,
    'ENGLISH_PAGE_CEILING': 9,
}

SIMWORLD = {
    'BUDGET': 5,
    'DISTRACTOR_RATE': 0.2,
    'VISIBILITY_THRESHOLD': 0.5,
    'FIXTURE_DIR': BASE_DIR / 'simworld' / 'fixtures',
}

BENCHGEN = {
    'FIXTURE_DIR': BASE_DIR / 'benchgen' / 'fixtures',
}

# Chat backend
# 키를 코드에 적어두면 깃에 같이 올라가니까 환경변수에서만 읽음
CHAT = {
    'PROVIDER': os.environ.get('SCOUT_CHAT_PROVIDER', 'openai'),
    'BASE_URL': os.environ.get('SCOUT_CHAT_BASE_URL', 'https://api.openai.com/v1'),
    'MODEL': os.environ.get('SCOUT_CHAT_MODEL', ''),
    'API_KEY': os.environ.get('SCOUT_CHAT_API_KEY', ''),
    'TIMEOUT': int(os.environ.get('SCOUT_CHAT_TIMEOUT', '300')),
    'RETRIES': 3,
    'CONCURRENCY': 4,
    'TEMPERATURE': 0.2,
}
