import json
import re

from django import forms
from django.conf import settings

from agents.registry import BACKEND_NAMES, ROLE_FIELDS
from scout.models import Ablation, DedupMode
from scout.orchestrator import RunConfig
from utils.forms import CommaListField, LayeredForm
from utils.jsonl import read_json

LANGUAGE_CODE = re.compile(r'^[a-z]{2,3}$')

# 설정 파일 / 플래그에서 쓰는 이름 -> settings.SCOUT 키
SETTINGS_KEYS = {
    'epochs': 'EPOCHS',
    'm': 'M',
    'k': 'K',
    'c': 'C',
    'languages': 'LANGUAGES',
    'dedup_mode': 'DEDUP_MODE',
    'dedup_batch_size': 'DEDUP_BATCH_SIZE',
    'summary_cap': 'SUMMARY_CAP',
    'seed': 'SEED',
    'backend': 'BACKEND',
    'share_candidates': 'SHARE_CANDIDATES',
    'call_ceiling': 'CALL_CEILING',
    'max_workers': 'MAX_WORKERS',
    'flat_k': 'FLAT_K',
}


def settings_defaults():
    return {name: settings.SCOUT[key] for name, key in SETTINGS_KEYS.items()}


class RunConfigForm(LayeredForm):
    """RunConfigForm(settings_defaults(), config_file, flags) 순서로 덮어씀"""

    query = forms.CharField(required=False, strip=True)
    epochs = forms.IntegerField(min_value=1)
    m = forms.IntegerField(min_value=1)
    k = forms.IntegerField(min_value=1)
    c = forms.FloatField()
    languages = CommaListField()
    dedup_mode = forms.ChoiceField(choices=DedupMode.choices)
    dedup_batch_size = forms.IntegerField(min_value=1)
    summary_cap = forms.IntegerField(min_value=1)
    seed = forms.IntegerField()
    backend = forms.ChoiceField(choices=[(name, name) for name in BACKEND_NAMES])
    roles = forms.JSONField(required=False)
    share_candidates = forms.BooleanField(required=False)
    call_ceiling = forms.IntegerField(required=False, min_value=1)
    max_workers = forms.IntegerField(min_value=1)
    ablation = forms.ChoiceField(choices=Ablation.choices, required=False)
    flat_k = forms.IntegerField(min_value=1)
    fixture = forms.CharField(required=False)

    def clean_c(self):
        c = self.cleaned_data['c']
        if c is not None and c <= 0:
            raise forms.ValidationError('exploration constant must be > 0')
        return c

    def clean_languages(self):
        languages = self.cleaned_data['languages']
        if not languages:
            raise forms.ValidationError('at least one language is required')
        bad = [code for code in languages if not LANGUAGE_CODE.match(code)]
        if bad:
            raise forms.ValidationError(f'not a language code: {", ".join(bad)}')
        if len(set(languages)) != len(languages):
            raise forms.ValidationError('languages contain duplicates')
        return languages

    def clean_roles(self):
        roles = self.cleaned_data['roles'] or {}
        if not isinstance(roles, dict):
            raise forms.ValidationError('roles must map an agent role to a backend name')
        for role, backend in roles.items():
            if role not in ROLE_FIELDS:
                raise forms.ValidationError(f'unknown role {role}; expected one of {", ".join(ROLE_FIELDS)}')
            if backend not in BACKEND_NAMES:
                raise forms.ValidationError(f'unknown backend {backend} for {role}')
        return roles

    def clean(self):
        cleaned_data = super().clean()
        if not cleaned_data.get('query') and not cleaned_data.get('fixture'):
            raise forms.ValidationError('query is required unless a fixture supplies one')
        return cleaned_data

    def to_config(self, query=None):
        data = self.cleaned_data
        return RunConfig(
            query=data.get('query') or query or '',
            epochs=data['epochs'],
            m=data['m'],
            k=data['k'],
            languages=tuple(data['languages']),
            dedup_mode=data['dedup_mode'],
            c=data['c'],
            seed=data['seed'],
            backend=data['backend'],
            roles=tuple(sorted(data['roles'].items())),
            share_candidates=data['share_candidates'],
            call_ceiling=data.get('call_ceiling'),
            dedup_batch_size=data['dedup_batch_size'],
            summary_cap=data['summary_cap'],
            max_workers=data['max_workers'],
            ablation=data.get('ablation') or Ablation.NONE,
            flat_k=data['flat_k'],
            fixture=data.get('fixture') or '',
        )


def load_config_file(path):
    """JSON 설정 파일을 dict 로 읽음. 형식이 틀리면 ValueError"""
    try:
        data = read_json(path)
    except FileNotFoundError as e:
        raise ValueError(f'config file {path} does not exist') from e
    except json.JSONDecodeError as e:
        raise ValueError(f'{path}: not valid JSON ({e.msg} at line {e.lineno})') from e
    if not isinstance(data, dict):
        raise ValueError(f'{path}: the config must be a JSON object')
    return data


def run_config_form(options, *layers):
    """settings 기본값 < layers (설정 파일들) < 커맨드 옵션"""
    flags = {name: options.get(name) for name in RunConfigForm.base_fields}
    return RunConfigForm(settings_defaults(), *layers, flags)
