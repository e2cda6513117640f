from django.apps import AppConfig


class BenchgenConfig(AppConfig):
    name = 'benchgen'
    verbose_name = 'Benchmark generation'
