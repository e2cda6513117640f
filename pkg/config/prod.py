from .base import *

DEBUG = False
LOG_LEVEL = 'WARNING'
for _logger in LOGGING['loggers'].values():
    _logger['level'] = LOG_LEVEL
