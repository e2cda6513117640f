from django.core.exceptions import ImproperlyConfigured

from agents.base import Backends
from agents.chat import build_chat_backends
from agents.scripted import build_scripted_backends

BACKEND_NAMES = ('scripted', 'chat')
ROLE_FIELDS = ('investigator', 'validator', 'deduplicator', 'coach')


def resolve_roles(name, roles=None):
    """역할별 backend 이름. roles 에 없는 역할은 name 을 씀"""
    resolved = {role: (roles or {}).get(role) or name for role in ROLE_FIELDS}
    unknown_roles = sorted(set(roles or {}) - set(ROLE_FIELDS))
    if unknown_roles:
        raise ImproperlyConfigured(f'unknown agent roles: {", ".join(unknown_roles)}')
    unknown = sorted({backend for backend in resolved.values() if backend not in BACKEND_NAMES})
    if unknown:
        raise ImproperlyConfigured(f'unknown backends: {", ".join(unknown)}; expected {" or ".join(BACKEND_NAMES)}')
    return resolved


def build_backends(name='scripted', roles=None, universe=None, budget=5, distractor_rate=0.0,
                   threshold=0.5, seed=0, transcript_dir=None):
    resolved = resolve_roles(name, roles)
    built = {}
    if 'scripted' in resolved.values():
        if universe is None:
            raise ImproperlyConfigured('scripted backends need a simulated universe (use --fixture)')
        built['scripted'] = build_scripted_backends(universe, budget, distractor_rate, threshold, seed)
    if 'chat' in resolved.values():
        built['chat'] = build_chat_backends(transcript_dir=transcript_dir, seed=seed)

    names = sorted(set(resolved.values()))
    return Backends(
        **{role: getattr(built[resolved[role]], role) for role in ROLE_FIELDS},
        name=names[0] if len(names) == 1 else '+'.join(f'{role}={resolved[role]}' for role in ROLE_FIELDS),
    )
