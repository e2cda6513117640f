from django import forms


class CommaListField(forms.Field):
    """'en,zh' 같은 문자열이나 ['en', 'zh'] 리스트를 모두 받는 필드"""

    def to_python(self, value):
        if value in self.empty_values:
            return []
        if isinstance(value, str):
            value = value.split(',')
        return [str(item).strip() for item in value if str(item).strip()]


class LayeredForm(forms.Form):
    """여러 설정 레이어를 합쳐서 검증하는 폼.

    뒤에 오는 레이어가 우선함: LayeredForm(defaults, config_file, flags)
    값이 None 인 항목은 건너뜀 (플래그를 안 줬으면 아래 레이어 값 사용)
    """

    def __init__(self, *layers, **kwargs):
        data = {}
        for layer in layers:
            data.update({key: value for key, value in (layer or {}).items() if value is not None})
        self.unknown_keys = sorted(set(data) - set(self.base_fields))
        super().__init__(data=data, **kwargs)
        for name, field in self.fields.items():
            if name not in data:
                field.required = False
            if isinstance(field, forms.BooleanField):  # 체크박스가 아니라 true/false 값
                field.required = False

    def clean(self):
        cleaned_data = super().clean()
        if self.unknown_keys:
            raise forms.ValidationError(f'unknown keys: {", ".join(self.unknown_keys)}')
        return cleaned_data

    def errors_as_text(self):
        lines = []
        for name, errors in self.errors.items():
            label = name if name != '__all__' else 'config'
            for error in errors:
                lines.append(f'{label}: {error}')
        return '\n'.join(lines)
