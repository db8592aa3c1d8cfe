"""
Integration test runner script for the quantum walk simulator.

The acceptance checks run preset-sized lattices, so they are always
collected with ``--runslow``.
"""

import pytest
import sys
from pathlib import Path

# Add project root to path
project_root = Path(__file__).parent.parent
sys.path.insert(0, str(project_root))


def run_integration_tests():
    """Run all integration tests with comprehensive reporting."""

    # Test configuration
    test_args = [
        # Test discovery
        "tests/integration/",

        # Verbosity and output
        "-v",                    # Verbose output
        "--tb=short",           # Short traceback format
        "--strict-markers",     # Strict marker validation

        # Test execution
        "--maxfail=3",          # Stop after 3 failures
        "--runslow",            # Acceptance checks are slow by nature

        # Markers
        "-m", "integration",    # Run only integration tests

        # Output formatting
        "--color=yes",          # Colored output
    ]

    print("Running Integration Tests for the Quantum Walk Simulator")
    print("=" * 55)
    print(f"Python version: {sys.version}")
    print(f"Test directory: {project_root}/tests/integration/")
    print(f"Project root: {project_root}")
    print("=" * 55)

    # Run tests
    exit_code = pytest.main(test_args)

    print("\n" + "=" * 55)
    if exit_code == 0:
        print("✅ All integration tests passed!")
    else:
        print("❌ Some integration tests failed!")
        print(f"Exit code: {exit_code}")
    print("=" * 55)

    return exit_code


def run_specific_integration_suite(suite_name):
    """Run one acceptance class, e.g. ``strip`` or ``droplet``."""

    suite_mapping = {
        "strip": "tests/integration/test_acceptance.py::TestStripEdgeModes",
        "decay": "tests/integration/test_acceptance.py::TestEdgeDecay",
        "sigma_z": "tests/integration/test_acceptance.py::TestSigmaZFrame",
        "trajectories": "tests/integration/test_acceptance.py::TestTrajectoryOracle",
        "droplet": "tests/integration/test_acceptance.py::TestDropletTransport",
        "droplet_decoherent": "tests/integration/test_acceptance.py::TestDecoherentDropletTransport",
        "anchors": "tests/integration/test_acceptance.py::TestEdgeStateAnchors",
        "presets": "tests/integration/test_acceptance.py::TestPresetRuns",
    }

    if suite_name not in suite_mapping:
        print(f"Unknown integration test suite: {suite_name}")
        print(f"Available suites: {', '.join(suite_mapping.keys())}")
        return 1

    test_args = [
        suite_mapping[suite_name],
        "-v",
        "--tb=short",
        "--color=yes",
        "--runslow",
        "-m", "integration",
    ]

    print(f"Running {suite_name} integration test suite")
    print(f"Test target: {suite_mapping[suite_name]}")
    print("=" * 55)

    return pytest.main(test_args)


if __name__ == "__main__":
    if len(sys.argv) > 1:
        exit_code = run_specific_integration_suite(sys.argv[1])
    else:
        exit_code = run_integration_tests()

    sys.exit(exit_code)
