import pytest

from utils import suites
from utils.errors import LabError


@pytest.mark.parametrize('name', sorted(suites.SUITES))
def test_every_property_holds(name):
    results = suites.run_suites([name])
    assert results
    failed = [f"{r.name}: {r.detail}" for r in results if not r.passed]
    assert failed == []
    assert {r.suite for r in results} == {name}


def test_fixture_properties_are_reported_per_game():
    names = [r.name for r in suites.run_suites(['occupancy'])]
    assert 'normalization on matching_pennies' in names
    assert 'normalization on random games' in names


def test_unknown_suite():
    with pytest.raises(LabError):
        suites.run_suites(['occupancy', 'bogus'])


def test_gradient_details_name_the_error_measure():
    results = suites.run_suites(['gradients'])
    assert {r.name for r in results} >= {'opponent_ce gradient matches central differences'}
    assert all(r.detail.startswith('worst norm-relative error ') for r in results)
