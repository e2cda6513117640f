from django.apps import AppConfig


class AgentsConfig(AppConfig):
    name = 'agents'
    verbose_name = 'Agent backends'
