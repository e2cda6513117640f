"""Line-delimited JSON snapshots.

Every line carries ``schema`` (format version) and ``kind`` before the record
fields, in a stable order, so two snapshots of the same state compare
byte-for-byte.
"""
import json
from pathlib import Path

from django.core.serializers.json import DjangoJSONEncoder

SCHEMA_VERSION = 1


def dumps_record(kind, record):
    line = {'schema': SCHEMA_VERSION, 'kind': kind}
    line.update(record)
    return json.dumps(line, cls=DjangoJSONEncoder, ensure_ascii=False)


def write_lines(path, kind, records):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        for record in records:
            f.write(dumps_record(kind, record))
            f.write('\n')
    return path


def read_lines(path, kind=None):
    records = []
    with open(path, encoding='utf-8') as f:
        for line in f:
            if not line.strip():
                continue
            record = json.loads(line)
            if record.pop('schema', None) != SCHEMA_VERSION:
                raise ValueError(f'{path}: unsupported schema version')
            if kind is not None and record.pop('kind', None) != kind:
                continue
            records.append(record)
    return records


def write_json(path, data):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(data, f, cls=DjangoJSONEncoder, ensure_ascii=False, indent=2)
        f.write('\n')
    return path


def read_json(path):
    with open(path, encoding='utf-8') as f:
        return json.loads(f.read())
