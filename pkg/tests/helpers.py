"""Oracle-backed stand-ins shared by the tests."""
import numpy as np

from src.core import PredicateKind
from src.neuro import Mlp, TrainedCandidate
from src.selection import AtomDataset, Candidate, induce_effect_vector

INCONSISTENT_LOSS = 0.5
CONSISTENT_LOSS = 0.001


def oracle_candidates(domain, demos, names=None):
    """Oracle predicates as selection candidates, with effect vectors read off the demos."""
    dataset = AtomDataset(demos)
    candidates = []
    for pred in domain.oracle_predicates:
        if pred.kind == PredicateKind.DERIVED_DYNAMIC:
            continue
        if names is not None and pred.name not in names:
            continue
        classifier = domain.oracle_classifiers[pred.name]
        ev = induce_effect_vector(pred, dataset.truth(pred, classifier), demos, domain.controllers)
        candidates.append(Candidate(pred, classifier, ev))
    return candidates


def observed_signature(ev, demos):
    """Nonzero effects restricted to controllers the demonstrations actually run."""
    used = {t.action.schema.name for d in demos for t in d.transitions}
    return tuple(entry for entry in ev.signature() if entry[0] in used)


def make_oracle_fit(domain, demos):
    """Stand-in for classifier training.

    A proposal is consistent exactly when an oracle predicate of the same
    name changes the way the proposed effect vector says on every
    demonstrated controller.
    """
    reference = {c.name: observed_signature(c.effect_vector, demos) for c in oracle_candidates(domain, demos)}
    calls = []

    def fit(predicate, ev):
        calls.append(predicate.name)
        consistent = reference.get(predicate.name) == observed_signature(ev, demos)
        loss = CONSISTENT_LOSS if consistent else INCONSISTENT_LOSS
        input_dim = sum(t.feature_dim for t in predicate.arg_types)
        mlp = Mlp(input_dim, (4,), np.random.default_rng(0))
        return TrainedCandidate(predicate, ev, mlp, loss, consistent, [loss])

    fit.calls = calls
    return fit


def make_signature_fit(domain, demos):
    """Like make_oracle_fit but blind to names: a proposal is consistent when
    its argument types and observed effects match some oracle predicate.

    ``fit.covered`` collects the oracle predicates matched so far.
    """
    reference = {(c.predicate.arg_types, observed_signature(c.effect_vector, demos)): c.name
                 for c in oracle_candidates(domain, demos)}
    calls = []
    covered = set()

    def fit(predicate, ev):
        calls.append(predicate.name)
        match = reference.get((predicate.arg_types, observed_signature(ev, demos)))
        if match is not None:
            covered.add(match)
        loss = CONSISTENT_LOSS if match is not None else INCONSISTENT_LOSS
        mlp = Mlp(sum(t.feature_dim for t in predicate.arg_types), (4,), np.random.default_rng(0))
        return TrainedCandidate(predicate, ev, mlp, loss, match is not None, [loss])

    fit.calls = calls
    fit.covered = covered
    return fit
