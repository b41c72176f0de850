import math
from pathlib import Path

import numpy as np
import pytest
from scipy.stats import norm

from bachimpact import ConfigError, NotPositiveDefiniteError
from bachimpact.cli import main
from bachimpact.config import (
    config_hash,
    emit_config,
    load_config,
    parse_config_text,
    resolve_config,
)

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"

MINIMAL = """
model.d = 1
model.s0 = 8.0
model.sigma = 1.0
model.T = 1.0
payoff.kind = basket_call
payoff.a = 1.0
payoff.b = -8.0
impact.a_risk = 1.0
numerics.seed = 7
"""


class TestConfigParsing:
    def test_minimal_resolves(self):
        cfg = resolve_config(parse_config_text(MINIMAL))
        assert cfg.model.d == 1
        assert cfg.seed == 7
        assert cfg.lambdas == [0.4, 0.2, 0.1, 0.05]
        assert np.array_equal(cfg.phi0, [0.0])

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError, match="unknown key"):
            parse_config_text(MINIMAL + "\nmodel.bogus = 1\n")

    def test_duplicate_key_rejected(self):
        with pytest.raises(ConfigError, match="duplicate"):
            parse_config_text(MINIMAL + "\nmodel.T = 2.0\n")

    def test_missing_seed_rejected(self):
        text = MINIMAL.replace("numerics.seed = 7", "")
        with pytest.raises(ConfigError, match="numerics.seed"):
            resolve_config(parse_config_text(text))

    def test_non_spd_sigma_rejected(self):
        text = MINIMAL.replace("model.sigma = 1.0", "model.sigma = -1.0")
        with pytest.raises(NotPositiveDefiniteError):
            resolve_config(parse_config_text(text))

    def test_bad_value_diagnostics(self):
        with pytest.raises(ConfigError, match="cannot parse"):
            parse_config_text("model.T = one\n")

    def test_roundtrip_idempotent(self):
        values = parse_config_text(MINIMAL)
        emitted = emit_config(values)
        values2 = parse_config_text(emitted)
        assert values == values2
        assert emit_config(values2) == emitted
        assert config_hash(values) == config_hash(values2)

    def test_generic_payoff_registry(self):
        text = MINIMAL.replace(
            "payoff.kind = basket_call", "payoff.kind = generic\npayoff.name = straddle"
        )
        cfg = resolve_config(parse_config_text(text))
        assert cfg.payoff.lipschitz_constant == pytest.approx(1.0)

    def test_shipped_configs_load(self):
        for name in ("figure1", "converge_atm", "dual_atm", "hedge_atm", "check_default"):
            cfg = load_config(str(CONFIG_DIR / f"{name}.cfg"))
            assert cfg.model.T == 1.0


def run_cli(args):
    return main([str(a) for a in args])


class TestCli:
    def test_figure_values(self, tmp_path, call_oracle):
        out = tmp_path / "figure.csv"
        code = run_cli(["figure", "--config", CONFIG_DIR / "figure1.cfg", "--out", out])
        assert code == 0
        lines = [l for l in out.read_text().splitlines() if not l.startswith("#")]
        assert lines[0] == "a_risk,indifference_limit"
        rows = [tuple(map(float, l.split(","))) for l in lines[1:]]
        values = [v for _, v in rows]
        for (a_risk, value) in rows:
            assert abs(value - call_oracle(math.sqrt(a_risk) / 2.0)) < 1e-6
        assert all(b > a for a, b in zip(values, values[1:]))

    def test_price_rows_zero_payoff(self, tmp_path):
        out = tmp_path / "price0.csv"
        cfg = tmp_path / "price0.cfg"
        cfg.write_text(
            MINIMAL.replace("payoff.kind = basket_call", "payoff.kind = generic")
            + "payoff.name = zero\n"
        )
        assert run_cli(["price", "--config", cfg, "--out", out]) == 0
        for line in out.read_text().splitlines():
            if line.startswith("#") or line.startswith("a_risk"):
                continue
            u_val = float(line.split(",")[3])
            assert u_val == 0.0

    def test_price_rows(self, tmp_path, call_oracle):
        out = tmp_path / "price.csv"
        cfg = tmp_path / "price.cfg"
        cfg.write_text(MINIMAL + "price.a_grid = 0.25 1.0 4.0\n")
        code = run_cli(["price", "--config", cfg, "--out", out])
        assert code == 0
        lines = [l for l in out.read_text().splitlines() if not l.startswith("#")]
        assert lines[0] == "a_risk,t,x_0,u_value,delta_0,pde_residual"
        for line in lines[1:]:
            a_risk, t, x, u_val, delta, res = map(float, line.split(","))
            m = math.sqrt(a_risk) / 2.0
            assert abs(u_val - call_oracle(m)) < 1e-9
            assert abs(delta - norm.cdf(m)) < 1e-9
            assert abs(res) < 1e-3

    def test_converge_csv_and_headers(self, tmp_path):
        out = tmp_path / "converge.csv"
        code = run_cli(
            ["converge", "--config", CONFIG_DIR / "converge_atm.cfg",
             "--out", out, "--paths", 2000, "--quiet"]
        )
        assert code == 0
        text = out.read_text()
        assert "# config_hash=" in text
        assert "# n_steps_lam_0.4=1000" in text
        body = [l for l in text.splitlines() if not l.startswith("#")]
        assert body[0] == "lam,ce_value,ce_se,limit,slack_bound"
        assert len(body) == 5
        for line in body[1:]:
            lam, ce, se, limit, slack = map(float, line.split(","))
            assert slack == 0.0  # driftless config
            assert ce <= limit + 3.0 * se

    def test_seed_override_changes_output(self, tmp_path):
        outs = []
        for seed in (1, 2):
            out = tmp_path / f"converge_{seed}.csv"
            run_cli(
                ["converge", "--config", CONFIG_DIR / "converge_atm.cfg",
                 "--out", out, "--paths", 500, "--seed", seed, "--quiet"]
            )
            outs.append(out.read_bytes())
        assert outs[0] != outs[1]

    def test_worker_count_does_not_change_output(self, tmp_path):
        blobs = []
        for workers in (1, 2):
            out = tmp_path / f"hedge_w{workers}.csv"
            run_cli(
                ["hedge", "--config", CONFIG_DIR / "hedge_atm.cfg",
                 "--out", out, "--workers", workers, "--quiet"]
            )
            blobs.append(out.read_bytes())
        assert blobs[0] == blobs[1]

    def test_dual_csv(self, tmp_path, call_oracle):
        out = tmp_path / "dual.csv"
        cfg = tmp_path / "dual.cfg"
        cfg.write_text((CONFIG_DIR / "dual_atm.cfg").read_text().replace(
            "dual.n_random_specs = 20", "dual.n_random_specs = 3"
        ))
        code = run_cli(["dual", "--config", cfg, "--out", out])
        assert code == 0
        body = [l for l in out.read_text().splitlines() if not l.startswith("#")]
        rows = {l.split(",")[0]: list(map(float, l.split(",")[1:])) for l in body[1:]}
        limit = call_oracle(0.5)
        assert abs(rows["zero"][0] - call_oracle(0.0)) < 1e-6
        assert abs(rows["optimal"][0] - limit) < 1e-5
        for name, (value, _) in rows.items():
            assert value <= limit + 1e-5

    def test_invalid_config_exit_code(self, tmp_path, capsys):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text(MINIMAL.replace("model.sigma = 1.0", "model.sigma = -2.0"))
        assert run_cli(["figure", "--config", cfg]) == 1
        assert "error" in capsys.readouterr().err

    def test_missing_key_exit_code(self, tmp_path, capsys):
        cfg = tmp_path / "bad2.cfg"
        cfg.write_text("model.d = 1\n")
        assert run_cli(["price", "--config", cfg]) == 1
        capsys.readouterr()

    def test_numeric_failure_exit_code(self, tmp_path, capsys, monkeypatch):
        from bachimpact import NonFiniteResultError
        from bachimpact import cli as cli_mod

        def boom(cfg, out, quiet):
            raise NonFiniteResultError("synthetic overflow")

        monkeypatch.setitem(cli_mod._COMMANDS, "figure", boom)
        cfg = tmp_path / "ok.cfg"
        cfg.write_text(MINIMAL)
        assert run_cli(["figure", "--config", cfg]) == 2
        assert "numeric failure" in capsys.readouterr().err


class TestCheckCommand:
    def test_default_config_passes(self, capsys):
        code = run_cli(["check", "--config", CONFIG_DIR / "check_default.cfg"])
        out = capsys.readouterr().out
        assert code == 0
        assert "[PASS]" in out
        assert "[FAIL]" not in out

    def test_corrupted_sigma_fails(self, tmp_path, capsys):
        cfg = tmp_path / "badsigma.cfg"
        cfg.write_text(
            (CONFIG_DIR / "check_default.cfg").read_text().replace(
                "model.sigma = 1.0", "model.sigma = -1.0"
            )
        )
        assert run_cli(["check", "--config", cfg]) == 1
        assert "positive" in capsys.readouterr().err
