from .base import *

# 테스트 중에는 경고 이상만 출력
for _logger in LOGGING['loggers'].values():
    _logger['level'] = 'ERROR'
