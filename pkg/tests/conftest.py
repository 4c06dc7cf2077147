from __future__ import annotations

import pytest

from cohereval.backends.synthetic import (
    PERFECT,
    RelationSpec,
    SyntheticKBConfig,
    generate_synthetic,
)
from cohereval.corpus import Corpus, Relation, Triple, build_answer_index
from cohereval.types import RelType

from support import make_corpus

@pytest.fixture
def capital_relation() -> Relation:
    return Relation(id="capital-of", template="The capital of [X] is [Y].", rel_type=RelType.ONE_TO_ONE)


@pytest.fixture
def located_relation() -> Relation:
    return Relation(id="located-in", template="[X] is located in [Y].", rel_type=RelType.N_TO_ONE)


@pytest.fixture
def produced_relation() -> Relation:
    return Relation(id="produced-by", template="[X] is produced by [Y].", rel_type=RelType.N_TO_ONE)


@pytest.fixture
def geo_corpus(capital_relation, located_relation, produced_relation) -> Corpus:
    triples = [
        Triple("Malta", "Valletta", "capital-of"),
        Triple("Germany", "Berlin", "capital-of"),
        Triple("Munich", "Bavaria", "located-in"),
        Triple("Nuremberg", "Bavaria", "located-in"),
        Triple("iPhone", "Apple", "produced-by"),
        Triple("iPad", "Apple", "produced-by"),
    ]
    return make_corpus([capital_relation, located_relation, produced_relation], triples)


@pytest.fixture
def geo_index(geo_corpus):
    return build_answer_index(geo_corpus)


@pytest.fixture
def mixed_config() -> SyntheticKBConfig:
    return SyntheticKBConfig(
        seed=11,
        behavior=PERFECT,
        relations=(
            RelationSpec(id="r00", rel_type=RelType.ONE_TO_ONE, instances=50),
            RelationSpec(id="r01", rel_type=RelType.N_TO_ONE, instances=50, fan_in=5),
            RelationSpec(id="r02", rel_type=RelType.N_TO_M, instances=50, fan_out=2),
            RelationSpec(id="r03", rel_type=RelType.N_TO_M, instances=50, symmetric=True),
        ),
    )


@pytest.fixture
def mixed_kb_corpus(mixed_config):
    return generate_synthetic(mixed_config)
