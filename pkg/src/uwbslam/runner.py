"""
Closed-loop runs: simulator and driver stepped together.

A live run lets the driver decide when to deploy tags; the resulting schedule
(deploy tick, tag id, position, resume tick) can be replayed so that ablation
modes see the very same motion and sensor streams.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .driver import Driver, RunLog, log_inputs
from .geometry import Pose2D
from .scenario import Scenario
from .sim import ScriptExhausted, Simulator


@dataclass
class DeployEvent:
    k: int
    tag_id: int
    position: tuple
    resume_k: Optional[int] = None


@dataclass
class RunResult:
    scenario: str
    mode: str
    seed: int
    config_hash: str
    driver: Driver
    truth: dict  # t -> Pose2D
    world: object
    schedule: list
    injected_ghosts: list
    halted_ticks: list  # (t, readings admitted while halted)
    log: Optional[RunLog] = None
    runtime: float = 0.0
    ticks: int = 0


def run_scenario(
    scenario: Scenario,
    seed: Optional[int] = None,
    mode: str = "full",
    schedule: Optional[list] = None,
    record: bool = False,
    audit: bool = False,
    max_ticks: Optional[int] = None,
) -> RunResult:
    """Run ``scenario`` to the end of its script.

    With ``schedule`` the deployments are replayed instead of decided live.
    """
    seed = scenario.seed if seed is None else seed
    t0 = time.perf_counter()
    log = RunLog() if record else None
    sim = Simulator(scenario.world, scenario.script, scenario.noise, scenario.sim_config(), seed)
    driver = Driver(scenario.driver, mode=mode, audit=audit, log=log)
    need_radar = driver.use_radar or record
    live = schedule is None
    events = [] if live else [DeployEvent(e.k, e.tag_id, tuple(e.position), e.resume_k) for e in schedule]
    by_deploy = {e.k: e for e in events}
    by_resume = {e.resume_k: e for e in events if e.resume_k is not None}
    pending: Optional[DeployEvent] = None
    truth = {}
    halted = []

    step = sim.last_step
    ticks = 0
    while True:
        truth[step.t] = step.truth
        frames = sim.radar_frames(step) if need_radar else {}
        readings = sim.aoa_readings(step)
        log_inputs(log, step.t, step.odom, frames, readings, truth=step.truth)
        n_before = len(driver.buffered_readings)
        out = driver.tick(step.t, step.odom, frames, readings)
        if audit and step.halted and step.k > 0:
            halted.append((step.t, len(driver.buffered_readings) - n_before))
        ticks += 1

        if live:
            if out.resume and pending is not None:
                pending.resume_k = step.k
                pending = None
                sim.release()
            if out.deploy_request and pending is None and driver.use_tags:
                tag_id = driver.next_tag_id
                pos = step.truth.transform_points(np.asarray(scenario.deploy_offset))[0]
                sim.deploy_tag(pos, tag_id)
                sim.hold()
                driver.begin_deployment(tag_id, step.t, pos)
                pending = DeployEvent(step.k, tag_id, (float(pos[0]), float(pos[1])))
                events.append(pending)
        else:
            ev = by_resume.get(step.k)
            if ev is not None:
                sim.release()
            ev = by_deploy.get(step.k)
            if ev is not None:
                sim.deploy_tag(ev.position, ev.tag_id)
                driver.begin_deployment(ev.tag_id, step.t, ev.position)
                if ev.resume_k is not None:
                    sim.hold()

        if max_ticks is not None and ticks >= max_ticks:
            break
        try:
            step = sim.step()
        except ScriptExhausted:
            break

    return RunResult(
        scenario=scenario.name,
        mode=mode,
        seed=seed,
        config_hash=scenario.driver.config_hash(),
        driver=driver,
        truth=truth,
        world=sim.world,
        schedule=events,
        injected_ghosts=list(sim.injected_ghosts),
        halted_ticks=halted,
        log=log,
        runtime=time.perf_counter() - t0,
        ticks=ticks,
    )
