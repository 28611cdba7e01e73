"""Harness tests: problem generation, difficulty proxy, bench aggregation
determinism, and end-to-end controller evaluation."""

import numpy as np
import pytest

from cbfsteer import bench
from cbfsteer.config import load_config, make_arm, make_env_gen, make_planner_limits, seed_stream
from cbfsteer.environment import EnvGenConfig, signed_distance
from cbfsteer.jsonio import load_json
from cbfsteer.kinematics import ArmModel


@pytest.fixture
def cfg():
    return load_config()


@pytest.fixture
def arm(cfg):
    return make_arm(cfg)


class TestGenProblems:
    def test_single_problem_zero_obstacles(self, arm):
        probs = bench.gen_problems(EnvGenConfig(num_obstacles=0), 1,
                                   np.random.default_rng(0), arm, clearance=0.025)
        assert len(probs) == 1
        assert probs[0].difficulty == "untagged"

    def test_clearance_validator_sweep(self, cfg, arm):
        gen = make_env_gen(cfg, num_obstacles=8)
        probs = bench.gen_problems(gen, 60, np.random.default_rng(1), arm, clearance=0.025)
        for p in probs:
            assert signed_distance(p.environment, arm, p.q0) >= 0.025
            assert signed_distance(p.environment, arm, p.qg) >= 0.025

    def test_seed_determinism_bytes(self, cfg, arm, tmp_path):
        gen = make_env_gen(cfg)
        for name in ("a", "b"):
            probs = bench.gen_problems(gen, 10, np.random.default_rng(5), arm, 0.025)
            bench.save_problems(tmp_path / f"{name}.json", probs)
        assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()

    def test_round_trip(self, cfg, arm, tmp_path):
        gen = make_env_gen(cfg)
        probs = bench.gen_problems(gen, 5, np.random.default_rng(2), arm, 0.025)
        bench.save_problems(tmp_path / "p.json", probs)
        loaded = bench.load_problems(tmp_path / "p.json")
        assert len(loaded) == 5
        np.testing.assert_allclose(loaded[3].q0, probs[3].q0)


class TestDifficultySplit:
    def test_empty_environments_all_easy(self, cfg, arm):
        probs = bench.gen_problems(EnvGenConfig(num_obstacles=0), 6,
                                   np.random.default_rng(3), arm, 0.025)
        tagged = bench.difficulty_split(probs, 2, np.random.default_rng(4), arm,
                                        make_planner_limits(cfg, max_nodes=60))
        # trivially solvable worlds: scores tie, the median split still halves them
        assert sum(1 for p in tagged if p.difficulty == "easy") == 3
        assert sum(1 for p in tagged if p.difficulty == "hard") == 3

    def test_split_sizes_differ_at_most_one(self, cfg, arm):
        gen = make_env_gen(cfg)
        probs = bench.gen_problems(gen, 11, np.random.default_rng(5), arm, 0.025)
        tagged = bench.difficulty_split(probs, 1, np.random.default_rng(6), arm,
                                        make_planner_limits(cfg, max_nodes=60))
        n_easy = sum(1 for p in tagged if p.difficulty == "easy")
        n_hard = sum(1 for p in tagged if p.difficulty == "hard")
        assert abs(n_easy - n_hard) <= 1
        assert n_easy + n_hard == 11

    def test_adding_obstacle_does_not_lower_mean_score(self, cfg, arm):
        # statistical paired check on the proxy scores
        from dataclasses import replace

        from cbfsteer.environment import Environment, Obstacle

        gen = make_env_gen(cfg, num_obstacles=3)
        probs = bench.gen_problems(gen, 16, np.random.default_rng(7), arm, 0.05)
        limits = make_planner_limits(cfg, max_nodes=80)

        def scores(problems, root):
            out = []
            for prob in problems:
                counts = []
                for r in range(2):
                    rng = np.random.default_rng(np.random.SeedSequence([root, prob.id, r]))
                    from cbfsteer.planner import PlanProblem, SteerStraightLine, rrt_plan

                    res = rrt_plan(PlanProblem(arm=arm, env=prob.environment, q0=prob.q0,
                                               qg=prob.qg), SteerStraightLine(), limits, rng)
                    counts.append(res.explored_nodes if res.status == "solved"
                                  else limits.max_nodes + 1)
                out.append(np.median(counts))
            return np.array(out)

        base = scores(probs, root=11)
        harder = []
        for p in probs:
            extra = Obstacle(kind="rect", center=(0.55, 0.55), half_extents=(0.12, 0.12))
            env2 = Environment(obstacles=p.environment.obstacles + (extra,),
                               workspace=p.environment.workspace)
            # keep endpoints valid; skip problems whose endpoints now collide
            if (signed_distance(env2, arm, p.q0) <= 0
                    or signed_distance(env2, arm, p.qg) <= 0):
                harder.append(p)
            else:
                harder.append(replace(p, environment=env2))
        augmented = scores(harder, root=11)
        assert augmented.mean() >= base.mean() - 1e-9


class TestRunBench:
    def test_row_count_and_csv_schema(self, cfg, arm, tmp_path):
        gen = make_env_gen(cfg, num_obstacles=2)
        probs = bench.gen_problems(gen, 4, np.random.default_rng(8), arm, 0.025)
        tagged = bench.difficulty_split(probs, 1, np.random.default_rng(9), arm,
                                        make_planner_limits(cfg, max_nodes=40))
        cfg2 = dict(cfg)
        rows = bench.run_bench(tagged, [{"name": "straight"}], [0, 1], arm, cfg2,
                               tmp_path, root_seed=0, report_timing=True)
        assert len(rows) == 2  # one method x two difficulty classes
        csv = (tmp_path / "metrics.csv").read_text().splitlines()
        assert csv[0] == "method,difficulty,sr,nodes_mean,time_s_mean,n_runs"
        assert len(csv) == 1 + len(rows)
        runs = (tmp_path / "runs.jsonl").read_text().splitlines()
        assert len(runs) == 4 * 1 * 2

    def test_rows_recomputable_from_runs(self, cfg, arm, tmp_path):
        import json

        gen = make_env_gen(cfg, num_obstacles=2)
        probs = bench.gen_problems(gen, 3, np.random.default_rng(10), arm, 0.025)
        rows = bench.run_bench(probs, [{"name": "straight"}], [0], arm, cfg, tmp_path,
                               root_seed=1)
        runs = [json.loads(line) for line in (tmp_path / "runs.jsonl").open()]
        for row in rows:
            sel = [r for r in runs if r["method"] == row.method
                   and r["difficulty"] == row.difficulty]
            assert row.n_runs == len(sel)
            assert row.sr == pytest.approx(
                np.mean([r["result"]["status"] == "solved" for r in sel]))
            assert row.nodes_mean == pytest.approx(
                np.mean([r["result"]["explored_nodes"] for r in sel]))

    def test_no_timing_reruns_byte_identical(self, cfg, arm, tmp_path):
        gen = make_env_gen(cfg, num_obstacles=3)
        probs = bench.gen_problems(gen, 3, np.random.default_rng(11), arm, 0.025)
        outputs = []
        for name in ("a", "b"):
            out = tmp_path / name
            bench.run_bench(probs, [{"name": "straight"}, {"name": "hand-cbf"}], [0], arm,
                            cfg, out, root_seed=2, report_timing=False, svg=True)
            outputs.append(out)
        for fname in ("metrics.csv", "metrics.json", "runs.jsonl", "metrics.svg"):
            assert (outputs[0] / fname).read_bytes() == (outputs[1] / fname).read_bytes(), fname

    def test_missing_checkpoint_fails_before_running(self, cfg, arm, tmp_path):
        with pytest.raises(FileNotFoundError):
            bench.run_bench([], [{"name": "cbf-state", "checkpoint": "/nonexistent.json"}],
                            [0], arm, cfg, tmp_path)


class TestEvalController:
    def test_empty_environments_perfect_rates(self, cfg):
        # two links: no self pairs, so an empty world is truly unconstrained
        arm2 = ArmModel(link_lengths=(0.5, 0.4))
        probs = bench.gen_problems(EnvGenConfig(num_obstacles=0), 5,
                                   np.random.default_rng(12), arm2, 0.025)
        row, records = bench.eval_controller(probs, {"name": "hand-cbf"}, "static_full",
                                             arm2, cfg, horizon_s=12.0)
        assert row.goal_reaching_rate == 1.0
        assert row.safety_rate == 1.0
        assert row.mean_makespan is not None
        assert len(records) == 5

    def test_makespan_counts_successes_only(self, cfg, arm):
        gen = make_env_gen(cfg, num_obstacles=6)
        probs = bench.gen_problems(gen, 8, np.random.default_rng(13), arm, 0.025)
        row, records = bench.eval_controller(probs, {"name": "hand-cbf"}, "static_full",
                                             arm, cfg, horizon_s=4.0)
        succ = [r["steps_used"] for r in records if r["reached_goal"] and not r["collided"]]
        if succ:
            assert row.mean_makespan == pytest.approx(np.mean(succ))
        else:
            assert row.mean_makespan is None

    def test_dynamicize_assigns_speeds(self, cfg, arm):
        probs = bench.gen_problems(make_env_gen(cfg, num_obstacles=3), 2,
                                   np.random.default_rng(14), arm, 0.025)
        dyn = bench.dynamicize_problems(probs, 0.05, np.random.default_rng(15))
        for p in dyn:
            for o in p.environment.obstacles:
                assert np.hypot(*o.velocity) == pytest.approx(0.05)

    def test_unknown_setting_rejected(self, cfg, arm):
        with pytest.raises(ValueError):
            bench.eval_controller([], {"name": "hand-cbf"}, "bogus", arm, cfg)
