"""File-format round trips and schema errors."""

import pytest

from cellformer.dataio import (
    DataError, read_cell_jsonl, read_cls_examples, read_qa_examples,
    read_tagging_examples, write_cell_jsonl, write_cls_jsonl, write_qa_jsonl,
    write_tagging_jsonl,
)
from cellformer.synth import SynthConfig, gen_cls_dataset, gen_form_dataset, gen_qa_dataset

CFG = SynthConfig(seed=17, min_pairs=3, max_pairs=4)


def test_cell_jsonl_round_trip(tmp_path):
    docs = [ex.doc for ex in gen_form_dataset(CFG, 5)]
    path = tmp_path / "docs.jsonl"
    assert write_cell_jsonl(docs, path) == 5
    loaded = read_cell_jsonl(path)
    assert loaded == docs
    # second write is byte-identical
    path2 = tmp_path / "again.jsonl"
    write_cell_jsonl(loaded, path2)
    assert path.read_bytes() == path2.read_bytes()


def test_task_jsonl_round_trips(tmp_path):
    form = gen_form_dataset(CFG, 5)
    qa = gen_qa_dataset(CFG, 5)
    cls = gen_cls_dataset(CFG, 6)
    write_cell_jsonl([e.doc for e in form], tmp_path / "fd.jsonl")
    write_tagging_jsonl(form, tmp_path / "fl.jsonl")
    write_cell_jsonl([e.doc for e in qa], tmp_path / "qd.jsonl")
    write_qa_jsonl(qa, tmp_path / "ql.jsonl")
    write_cell_jsonl([e.doc for e in cls], tmp_path / "cd.jsonl")
    write_cls_jsonl(cls, tmp_path / "cl.jsonl")

    assert read_tagging_examples(tmp_path / "fd.jsonl", tmp_path / "fl.jsonl") == form
    assert read_qa_examples(tmp_path / "qd.jsonl", tmp_path / "ql.jsonl") == qa
    assert read_cls_examples(tmp_path / "cd.jsonl", tmp_path / "cl.jsonl") == cls


def test_missing_field_named(tmp_path):
    (tmp_path / "d.jsonl").write_text(
        '{"doc_id":"a","page_width":100,"cells":[{"text":"hi","box":[0,0,5,5]}]}\n'
    )
    with pytest.raises(DataError, match="page_height"):
        read_cell_jsonl(tmp_path / "d.jsonl")


def test_bad_json_names_line(tmp_path):
    good = '{"doc_id":"a","page_width":100,"page_height":100,"cells":[{"text":"hi","box":[0,0,5,5]}]}'
    (tmp_path / "d.jsonl").write_text(good + "\n{oops\n")
    with pytest.raises(DataError, match=r"d\.jsonl:2"):
        read_cell_jsonl(tmp_path / "d.jsonl")


def test_unknown_doc_id_in_labels(tmp_path):
    form = gen_form_dataset(CFG, 3)
    write_cell_jsonl([e.doc for e in form[:2]], tmp_path / "d.jsonl")
    write_tagging_jsonl(form, tmp_path / "l.jsonl")
    with pytest.raises(DataError, match=form[2].doc.doc_id):
        read_tagging_examples(tmp_path / "d.jsonl", tmp_path / "l.jsonl")


def test_empty_files_rejected(tmp_path):
    (tmp_path / "e.jsonl").write_text("")
    with pytest.raises(DataError, match="no documents"):
        read_cell_jsonl(tmp_path / "e.jsonl")
