import dataclasses
import io
import typing as t

import numpy as np
from numpy.typing import ArrayLike
import pytest
from pytest_mock import MockerFixture
from pytest_structlog import StructuredLogCapture
import structlog

from semikernel.aniso import DomainError, MultiIndex
from semikernel.config import SpecConfig, resolve_spec
from semikernel.fundsol import QuadratureConfig, UnsupportedOperatorError
from semikernel.gallery import ParabolicityError
from semikernel.symbol import ComplexArray, OperatorSpec
from semikernel.verify import (
    REPORT_HEADER,
    Measurement,
    Suite,
    VerificationFailure,
    VerificationReport,
    Verifier,
    VerifySettings,
    _Recorder,
    run_suite,
)


@pytest.fixture
def heat_config() -> SpecConfig:
    return resolve_spec("heat1d")


@pytest.fixture
def settings() -> VerifySettings:
    return VerifySettings(
        scaling_samples=100,
        growth_samples=50,
        cutoff_samples=16,
        grid_points=64,
    )


def _measurements(report: VerificationReport) -> dict[str, Measurement]:
    return {item.quantity: item for item in report.measurements}


class TestVerifySettings:
    @pytest.mark.parametrize(
        "changes",
        [
            {"scaling_samples": 0},
            {"table_samples": 1},
            {"interior": 0.0},
            {"agreement_interior": 1.5},
            {"half_width": 0.0},
            {"cutoff_half_width": 2.0},
            {"p": 1},
        ],
    )
    def test_invalid(self, changes: dict[str, float]) -> None:
        with pytest.raises(DomainError):
            VerifySettings(**changes)  # type: ignore[arg-type]


class TestVerificationReport:
    def test_require(self) -> None:
        report = VerificationReport(
            "op",
            (
                Measurement("scaling", "first", 1.0, 2.0, True),
                Measurement("scaling", "second", 3.0, 2.0, False),
            ),
        )
        assert not report.passed
        with pytest.raises(VerificationFailure) as err:
            report.require()
        assert str(err.value) == "scaling: second = 3 fails bound 2"
        assert err.value.measurement.quantity == "second"

    def test_write_csv(self) -> None:
        report = VerificationReport(
            "op", (Measurement("kernel", "oracle", 0.5, 1.0, True),)
        )
        fd = io.StringIO()
        report.write_csv(fd)
        assert fd.getvalue().splitlines() == [
            ",".join(REPORT_HEADER),
            "op,kernel,oracle,0.5,1.0,true",
        ]


class TestRunSuite:
    def test_scaling(
        self,
        log: StructuredLogCapture,
        heat_config: SpecConfig,
        settings: VerifySettings,
    ) -> None:
        report = run_suite(heat_config, Suite.SCALING, settings)
        assert report.spec == "heat1d"
        measured = _measurements(report)
        for quantity in (
            "rho dilation",
            "monomial dilation",
            "symbol dilation",
            "symbol growth constant",
            "cutoff derivative (2,0)",
            "shell integral scaling s=0",
            "shell divergence detected",
            "K kernel bound",
        ):
            assert measured[quantity].passed
        assert report.passed
        assert log.has("running suite", suite="scaling", level="info")

    def test_failure_logged(
        self, log: StructuredLogCapture, heat_config: SpecConfig
    ) -> None:
        strict = VerifySettings(
            scaling_samples=10, cutoff_samples=8, cutoff_slack=0.5
        )
        report = run_suite(heat_config, Suite.SCALING, strict)
        assert not report.passed
        assert not _measurements(report)["cutoff derivative (1,0)"].passed
        assert log.has(
            "property failed",
            quantity="cutoff derivative (1,0)",
            level="warning",
        )

    def test_counterexamples(
        self, heat_config: SpecConfig, settings: VerifySettings
    ) -> None:
        report = run_suite(heat_config, Suite.COUNTEREXAMPLES, settings)
        measured = _measurements(report)
        for quantity in (
            "constant norm finite s=-2",
            "constant norm divergent s=0",
            "onto pairing s=0",
            "witness exponent",
            "window formula p=2",
            "window formula p=3/2",
            "adjoint window p=3/2",
            "adjoint window p=3",
        ):
            assert measured[quantity].passed
        assert measured["witness exponent"].value == -4.0
        assert (
            measured["cutoff ratio R=8"].value
            < measured["cutoff ratio R=1"].value
        )

    def test_solver(
        self,
        log: StructuredLogCapture,
        heat_config: SpecConfig,
        settings: VerifySettings,
        quick_quadrature: QuadratureConfig,
    ) -> None:
        config = dataclasses.replace(heat_config, quadrature=quick_quadrature)
        small_table = dataclasses.replace(settings, table_samples=16)
        report = run_suite(config, Suite.SOLVER, small_table)
        measured = _measurements(report)
        assert measured["fourier residual"].passed
        assert measured["fourier error"].passed
        assert "convolution agreement" in measured
        assert log.has("kernel tabulated")

    def test_oracle_relative_at_each_point(
        self,
        mocker: MockerFixture,
        heat_config: SpecConfig,
        settings: VerifySettings,
    ) -> None:
        oracle = heat_config.entry.oracle
        assert oracle is not None

        def perturbed(
            spec: OperatorSpec, beta: MultiIndex, x: ArrayLike, cfg: t.Any
        ) -> ComplexArray:
            # off by 5e-4 where the kernel is smallest
            factor = 1 + 5e-4 if np.asarray(x)[-1] == 0.5 else 1.0
            return oracle.query(x) * factor

        mocker.patch("semikernel.verify.f_eval", side_effect=perturbed)
        verifier = Verifier(heat_config, settings)
        recorder = _Recorder(Suite.KERNEL, structlog.get_logger())
        verifier._oracle(recorder, oracle)
        measured = {item.quantity: item for item in recorder.measurements}
        assert measured["kernel oracle"].value == pytest.approx(5e-4)
        assert not measured["kernel oracle"].passed
        assert measured["kernel before time zero"].passed

    def test_gate(self, settings: VerifySettings) -> None:
        config = resolve_spec("backward-heat1d")
        with pytest.raises(ParabolicityError):
            run_suite(config, Suite.SCALING, settings)

    def test_kernel_unsupported(self, settings: VerifySettings) -> None:
        config = resolve_spec("laplace2")
        with pytest.raises(UnsupportedOperatorError):
            run_suite(config, Suite.KERNEL, settings)

    def test_scaling_unsupported_operator(
        self, settings: VerifySettings
    ) -> None:
        report = run_suite(resolve_spec("laplace2"), Suite.SCALING, settings)
        assert report.passed
