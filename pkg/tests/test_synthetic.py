import random

from spdrag.synthetic import company_documents, coverage_dataset, synthetic_corpus


def test_corpus_is_seeded():
    a, b = synthetic_corpus(10, seed=3), synthetic_corpus(10, seed=3)
    assert [d.text for d in a] == [d.text for d in b]
    assert [d.text for d in a] != [d.text for d in synthetic_corpus(10, seed=4)]
    assert len({d.id for d in a}) == 10


def test_company_documents_carry_one_fact_each():
    docs, facts = company_documents(random.Random(0), 6, "x")
    assert len({n for n, _ in facts}) == 6
    for doc, (name, amount) in zip(docs, facts):
        assert f"{name} reported revenue of {amount} million" in doc.text
        assert all(other not in doc.text for other, _ in facts if other != name)


def test_coverage_gold_spans_every_document():
    for inst in coverage_dataset(3, docs_per_instance=7, seed=1):
        assert len(inst.documents) == 7
        assert inst.gold_answer.count("reported revenue of") == 7
