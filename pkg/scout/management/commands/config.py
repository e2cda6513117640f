from django.core.management.base import BaseCommand, CommandError

from scout.forms import load_config_file, run_config_form


class Command(BaseCommand):
    help = 'Work with run config files. Precedence: command flags > config file > settings.SCOUT.'

    def add_arguments(self, parser):
        subparsers = parser.add_subparsers(dest='action', required=True)
        validate = subparsers.add_parser('validate', help='check a JSON run config file')
        validate.add_argument('path')

    def handle(self, *args, **options):
        if options['action'] == 'validate':
            self.validate(options['path'])

    def validate(self, path):
        try:
            data = load_config_file(path)
        except ValueError as e:
            raise CommandError(str(e), returncode=2)
        form = run_config_form({}, data)
        if not form.is_valid():
            raise CommandError(f'{path} is invalid:\n{form.errors_as_text()}', returncode=2)
        config = form.to_config()
        self.stdout.write(
            f'{path} is valid: epochs={config.epochs} m={config.m} k={config.k} '
            f'languages={",".join(config.languages)} dedup={config.dedup_mode} backend={config.backend}'
        )
