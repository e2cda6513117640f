from django.core.management.base import BaseCommand, CommandError

from simworld.universe import load_fixture


class Command(BaseCommand):
    help = (
        'Write the serialized universe of a fixture next to its parameter file, '
        'or with --check fail when the generator no longer reproduces the checked-in snapshot.'
    )

    def add_arguments(self, parser):
        parser.add_argument('fixture', help='fixture name under simworld/fixtures or a path')
        parser.add_argument('--check', action='store_true', help='compare instead of writing')

    def handle(self, *args, **options):
        try:
            fixture = load_fixture(options['fixture'])
        except (OSError, KeyError, ValueError) as e:
            raise CommandError(f'cannot load fixture {options["fixture"]}: {e}', returncode=2)

        generated = fixture.generate()
        if not options['check']:
            generated.write(fixture.snapshot)
            self.stdout.write(f'{len(generated)} entities -> {fixture.snapshot}')
            return

        if not fixture.snapshot.exists():
            raise CommandError(f'{fixture.snapshot} does not exist', returncode=1)
        expected = fixture.snapshot.read_text(encoding='utf-8').splitlines()
        actual = generated.to_lines().splitlines()
        for number, (want, got) in enumerate(zip(expected, actual), start=1):
            if want != got:
                raise CommandError(
                    f'{fixture.snapshot}: line {number} differs from the generator\n  snapshot:  {want}\n  generated: {got}',
                    returncode=1,
                )
        if len(expected) != len(actual):
            raise CommandError(
                f'{fixture.snapshot}: {len(expected)} lines, generator gives {len(actual)}', returncode=1,
            )
        self.stdout.write(f'{fixture.snapshot} matches the generator ({len(generated)} entities)')
