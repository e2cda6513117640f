from django.apps import AppConfig


class ScoutConfig(AppConfig):
    name = 'scout'
    verbose_name = 'Directive tree scouting'
