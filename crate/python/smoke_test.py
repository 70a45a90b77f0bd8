"""Smoke test for the ltc_accel extension module."""

import tempfile

import ltc_accel as ltc


def main():
    schedule = ltc.NoiseSchedule()
    model = ltc.Denoiser.benchmark()
    grid = ltc.timestep_grid(1000, 40)
    assert len(grid) == 41 and grid[0] == 1000 and grid[-1] == 0

    x = ltc.initial_noise(0, model.dim)
    full = ltc.sample_full(model, schedule, x, grid)
    assert full.nfe == 40

    skeleton = ltc.AccelerationPlan.after(12, 40)
    assert len(skeleton.accelerated_iterations(40)) == 14
    plan, records = ltc.calibrate(model, schedule, x, grid, skeleton)
    assert sorted(plan.wg) == skeleton.accelerated_iterations(40)
    assert all(w > 0 for _, _, w in records)

    y = ltc.initial_noise(100, model.dim)
    reference = ltc.sample_full(model, schedule, y, grid)
    accel = ltc.accelerated_sample(model, schedule, y, grid, plan)
    skip = ltc.sample_skipping(model, schedule, y, grid, set(plan.accelerated_iterations(40)))
    assert accel.nfe == skip.nfe == 26
    p_accel = ltc.psnr(reference.final_state, accel.final_state)
    p_skip = ltc.psnr(reference.final_state, skip.final_state)
    print(f"nfe {accel.nfe}, speedup {ltc.nfe_speedup(40, accel.nfe):.3f}x")
    print(f"psnr accelerated {p_accel:.2f} dB, skipping {p_skip:.2f} dB")
    assert p_accel > p_skip

    point = ltc.Denoiser.point_mass([0.5, -1.0])
    out = ltc.sample_full(point, schedule, ltc.initial_noise(1, 2), grid)
    assert max(abs(a - b) for a, b in zip(out.final_state, [0.5, -1.0])) < 1e-9

    try:
        ltc.accelerated_sample(model, schedule, y, grid, ltc.AccelerationPlan((1, 5)))
    except ltc.LtcError as e:
        print(f"rejected plan: {e.args[0]}")
    else:
        raise AssertionError("interval starting at 1 was accepted")

    assert "sd2-ddim-40" in ltc.presets()
    with tempfile.TemporaryDirectory() as out_dir:
        files, digest = ltc.run_experiment("angles", out_dir, preset="fig2-trace", jobs=2)
        assert "manifest.toml" in files and len(digest) == 64
        print(f"angles preset wrote {len(files)} files")
    print("ok")


if __name__ == "__main__":
    main()
