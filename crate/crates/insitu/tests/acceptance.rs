//! Acceptance suite: one test per criterion, each printing a PASS line.
//!
//! Run with `cargo test --test acceptance -- --nocapture` to see them.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_pcg::Pcg64;

use insitu::dtl::QueueMode;
use insitu::engine::{write_trace_csv, Label, TraceEvent};
use insitu::experiments::{
    compare_data_scaling, export_report, run_scenario, run_scenario_traced, MappingMode, Scenario,
    Workload,
};
use insitu::model::{
    classify_scenario, efficiency, extract_stages, idle_time, makespan, ModelInputs, StageCosts,
};
use insitu::platform::{LinkSpec, NodeSpec, Platform, Topology};
use insitu::workflow::{self, generate_ratio_allocations, Mapping, RunOptions, WorkflowConfig};

fn pass(criterion: u32, name: &str) {
    println!("ACCEPTANCE {criterion} {name}: PASS");
}

fn spread(platform: &Platform, count: usize, per_node: usize) -> Mapping {
    let mut entries = Vec::new();
    let mut left = count;
    for n in platform.node_ids() {
        if left == 0 {
            break;
        }
        let here = per_node.min(left);
        entries.push((n, here));
        left -= here;
    }
    assert_eq!(left, 0, "not enough nodes for {count} slots");
    Mapping::new(entries)
}

// ---------------------------------------------------------------- 1 ----

#[test]
fn criterion_1_model_identities() {
    let t0 = Instant::now();
    let mut rng = Pcg64::seed_from_u64(0xACCE);
    for case in 0..1000 {
        let balanced = case % 10 == 0;
        let s = rng.gen_range(0.001..50.0);
        let i = rng.gen_range(0.0..5.0);
        let (g, a) = if balanced {
            // Exactly balanced sides exercise the eta == 1 direction.
            (0.0, s + i)
        } else {
            (rng.gen_range(0.0..5.0), rng.gen_range(0.001..50.0))
        };
        let stages = StageCosts::new(s, i, g, a, 0.0, 0.0).unwrap();
        let rho = rng.gen_range(3..=64u64);
        let m = ModelInputs::with_rho(stages, rho).unwrap();

        let eta = efficiency(&m).unwrap();
        assert!(eta > 0.0 && eta <= 1.0, "eta {eta} out of (0, 1]");
        let idle = idle_time(&stages);
        assert_eq!(eta == 1.0, idle == 0.0, "eta/idle equivalence broken");
        if balanced {
            assert_eq!(eta, 1.0);
        }

        for lambda in [0.1, 1.0, 10.0] {
            let scaled = ModelInputs::with_rho(stages.scaled(lambda), rho).unwrap();
            assert!(
                (efficiency(&scaled).unwrap() - eta).abs() <= 1e-12,
                "eta not invariant under lambda={lambda}"
            );
            if !balanced {
                // Exactly balanced sides may flip by one ulp when rescaled.
                assert_eq!(
                    classify_scenario(&stages),
                    classify_scenario(&scaled.stages)
                );
            }
        }

        let expected = rho as f64 * stages.sim_side().max(stages.ana_side());
        assert_eq!(makespan(&m), expected, "makespan identity broken");
    }
    assert!(t0.elapsed().as_secs_f64() < 1.0, "criterion 1 exceeded 1 s");
    pass(1, "model identities");
}

// ---------------------------------------------------------------- 2 ----

#[test]
fn criterion_2_oracle_equivalence_model_vs_simulator() {
    let t0 = Instant::now();
    let mut checked = 0;
    'outer: for &(n_ranks, nodes) in &[(1usize, 1usize), (2, 1), (2, 2), (4, 2)] {
        for &work in &[0.02, 0.008] {
            for &scale in &[0.5, 2.0, 8.0] {
                for &rho in &[4u64, 6, 8] {
                    if checked == 50 {
                        break 'outer;
                    }
                    let p = Platform::homogeneous(nodes, 32, 1.0, 1.25e9, 1.0e-4).unwrap();
                    let cfg = WorkflowConfig {
                        total_iterations: rho * 100,
                        stride: 100,
                        exchange_every: 20,
                        n_ranks,
                        rank_iteration_work: work,
                        halo_bytes: 0.0,
                        // One message per actor per step keeps the
                        // component stages atomic.
                        n_analytics_actors: n_ranks,
                        analytics_mapping: None,
                        cost_per_particle: 7.93e-7,
                        compute_scale: scale,
                        size_per_particle: 100.0,
                        data_scale: 1.0,
                        n_particles: 1_000_000,
                        dtl_mode: QueueMode::Instantaneous,
                    };
                    let ranks = spread(&p, n_ranks, n_ranks.div_ceil(nodes));
                    let actors = spread(&p, n_ranks, n_ranks.div_ceil(nodes));
                    let out =
                        workflow::run(&p, &cfg, &ranks, &actors, &RunOptions::default()).unwrap();
                    let x = extract_stages(&out.trace, &cfg).unwrap();

                    let sides = x.stages.sim_side().max(x.stages.ana_side());
                    let predicted_steady = (rho - 1) as f64 * sides;
                    let rel = (x.steady_span - predicted_steady).abs() / x.steady_span;
                    assert!(
                        rel <= 0.01,
                        "config ranks={n_ranks} nodes={nodes} work={work} scale={scale} rho={rho}: \
                         steady span {} vs model {predicted_steady} ({rel:.4} rel)",
                        x.steady_span
                    );

                    let m = ModelInputs::new(x.stages, cfg.total_iterations, cfg.stride).unwrap();
                    let eta_pred = efficiency(&m).unwrap();
                    assert!(
                        (x.eta_simulated - eta_pred).abs() <= 0.01,
                        "eta measured {} vs predicted {eta_pred}",
                        x.eta_simulated
                    );
                    checked += 1;
                }
            }
        }
    }
    assert_eq!(checked, 50);
    assert!(
        t0.elapsed().as_secs_f64() < 30.0,
        "criterion 2 exceeded 30 s"
    );
    pass(
        2,
        "analytical model vs simulator on 50 deterministic configs",
    );
}

// ---------------------------------------------------------------- 3 ----

struct OracleFlow {
    route: Vec<usize>,
    size: f64,
    start: f64,
}

/// Brute-force fluid integrator: recomputes a textbook max-min allocation
/// from scratch at every arrival and completion.
fn oracle_completions(caps: &[f64], lats: &[f64], flows: &[OracleFlow]) -> Vec<f64> {
    let n = flows.len();
    let arrival: Vec<f64> = flows
        .iter()
        .map(|f| f.start + f.route.iter().map(|&l| lats[l]).sum::<f64>())
        .collect();
    let mut remaining: Vec<f64> = flows.iter().map(|f| f.size).collect();
    let mut done: Vec<Option<f64>> = vec![None; n];
    let mut t = arrival.iter().copied().fold(f64::INFINITY, f64::min);
    loop {
        let active: Vec<usize> = (0..n)
            .filter(|&i| done[i].is_none() && arrival[i] <= t)
            .collect();
        if active.is_empty() {
            match (0..n)
                .filter(|&i| done[i].is_none())
                .map(|i| arrival[i])
                .fold(None, |acc: Option<f64>, x| {
                    Some(acc.map_or(x, |a| a.min(x)))
                }) {
                Some(next) => {
                    t = next;
                    continue;
                }
                None => break,
            }
        }

        // Textbook progressive filling on the active set.
        let mut rates = vec![0.0f64; active.len()];
        let mut fixed = vec![false; active.len()];
        let mut residual = caps.to_vec();
        loop {
            let mut counts = vec![0usize; caps.len()];
            for (k, &i) in active.iter().enumerate() {
                if !fixed[k] {
                    for &l in &flows[i].route {
                        counts[l] += 1;
                    }
                }
            }
            let bottleneck = (0..caps.len()).filter(|&l| counts[l] > 0).min_by(|&x, &y| {
                (residual[x] / counts[x] as f64).total_cmp(&(residual[y] / counts[y] as f64))
            });
            let Some(bl) = bottleneck else { break };
            let share = residual[bl] / counts[bl] as f64;
            for (k, &i) in active.iter().enumerate() {
                if !fixed[k] && flows[i].route.contains(&bl) {
                    fixed[k] = true;
                    rates[k] = share;
                    for &l in &flows[i].route {
                        residual[l] -= share;
                    }
                }
            }
        }

        let mut t_next = f64::INFINITY;
        for (k, &i) in active.iter().enumerate() {
            t_next = t_next.min(t + remaining[i] / rates[k]);
        }
        for i in 0..n {
            if done[i].is_none() && arrival[i] > t {
                t_next = t_next.min(arrival[i]);
            }
        }
        for (k, &i) in active.iter().enumerate() {
            remaining[i] -= rates[k] * (t_next - t);
            if remaining[i] <= flows[i].size * 1e-12 {
                remaining[i] = 0.0;
                done[i] = Some(t_next);
            }
        }
        t = t_next;
    }
    done.into_iter().map(Option::unwrap).collect()
}

/// Replays a flow set on the engine: one actor per flow sleeping until its
/// start time.
fn engine_completions(p: &Platform, specs: &[(usize, usize, f64, f64)]) -> Vec<f64> {
    use std::cell::RefCell;
    use std::rc::Rc;

    let mut sim = insitu::engine::Simulation::new(p);
    let out = Rc::new(RefCell::new(vec![0.0f64; specs.len()]));
    for (k, &(src, dst, size, start)) in specs.iter().enumerate() {
        let out = Rc::clone(&out);
        let src = insitu::platform::NodeId::from_index(src);
        let dst = insitu::platform::NodeId::from_index(dst);
        sim.spawn(src, move |ctx| async move {
            if start > 0.0 {
                ctx.sleep(start).await?;
            }
            let t = ctx.comm(dst, size).await?;
            out.borrow_mut()[k] = t;
            Ok(())
        })
        .unwrap();
    }
    sim.run().unwrap();
    let done = out.borrow().clone();
    done
}

#[test]
fn criterion_3_network_model_oracle() {
    let t0 = Instant::now();

    // Single-flow closed form on every route shape.
    let star = Platform::homogeneous(3, 4, 1.0, 1.25e9, 1.0e-4).unwrap();
    for (src, dst, size) in [(0usize, 1usize, 1.25e6), (1, 2, 5.0e6), (0, 0, 2.0e7)] {
        let completions = engine_completions(&star, &[(src, dst, size, 0.0)]);
        let route = star
            .route(
                insitu::platform::NodeId::from_index(src),
                insitu::platform::NodeId::from_index(dst),
            )
            .unwrap();
        let res = star.link_resources();
        let lat: f64 = route.iter().map(|&l| res[l].latency).sum();
        let bw = route
            .iter()
            .map(|&l| res[l].bandwidth)
            .fold(f64::INFINITY, f64::min);
        let expected = lat + size / bw;
        let rel = (completions[0] - expected).abs() / expected;
        assert!(
            rel <= 1e-12,
            "single flow {src}->{dst}: {rel:e} relative error"
        );
    }

    // Enumerated contention grid vs the fluid oracle.
    let flat = {
        let nodes = (0..2)
            .map(|i| NodeSpec {
                name: format!("n{i}"),
                cores: 4,
                core_speed: 1.0,
                loopback_bandwidth: 1.7e10,
                loopback_latency: 1.0e-7,
            })
            .collect();
        let links = vec![LinkSpec {
            name: "net".into(),
            bandwidth: 1.25e9,
            latency: 1.0e-4,
        }];
        Platform::new(Topology::Flat, nodes, links).unwrap()
    };
    let star_slow_bb = {
        let nodes = (0..3)
            .map(|i| NodeSpec {
                name: format!("n{i}"),
                cores: 4,
                core_speed: 1.0,
                loopback_bandwidth: 1.7e10,
                loopback_latency: 1.0e-7,
            })
            .collect();
        let links = vec![
            LinkSpec {
                name: "backbone".into(),
                bandwidth: 6.0e8,
                latency: 2.0e-4,
            },
            LinkSpec {
                name: "access".into(),
                bandwidth: 1.25e9,
                latency: 1.0e-4,
            },
        ];
        Platform::new(Topology::Star, nodes, links).unwrap()
    };

    let sizes = [1.25e6, 5.0e6, 2.0e7, 8.0e5];
    let start_patterns: [[f64; 4]; 4] = [
        [0.0, 0.0, 0.0, 0.0],
        [0.0, 7.0e-4, 1.3e-3, 2.9e-3],
        [0.0, 0.002, 0.002, 0.009],
        [0.001, 0.0, 0.004, 0.0],
    ];
    let mut cases = 0;
    for (p, endpoints) in [
        (&flat, [(0usize, 1usize), (1, 0), (0, 1), (1, 0)]),
        (&star, [(0, 1), (1, 0), (0, 1), (1, 0)]),
        (&star_slow_bb, [(0, 1), (1, 0), (0, 1), (1, 0)]),
        (&star_slow_bb, [(0, 0), (0, 0), (1, 1), (0, 0)]),
    ] {
        for n_flows in 1..=4usize {
            for rot in 0..4usize {
                for starts in &start_patterns {
                    let specs: Vec<(usize, usize, f64, f64)> = (0..n_flows)
                        .map(|k| {
                            let (s, d) = endpoints[k];
                            (s, d, sizes[(k + rot) % 4], starts[k])
                        })
                        .collect();
                    let simulated = engine_completions(p, &specs);

                    let res = p.link_resources();
                    let caps: Vec<f64> = res.iter().map(|l| l.bandwidth).collect();
                    let lats: Vec<f64> = res.iter().map(|l| l.latency).collect();
                    let oracle_flows: Vec<OracleFlow> = specs
                        .iter()
                        .map(|&(s, d, size, start)| OracleFlow {
                            route: p
                                .route(
                                    insitu::platform::NodeId::from_index(s),
                                    insitu::platform::NodeId::from_index(d),
                                )
                                .unwrap(),
                            size,
                            start,
                        })
                        .collect();
                    let expected = oracle_completions(&caps, &lats, &oracle_flows);
                    for (k, (&sim, &exp)) in simulated.iter().zip(&expected).enumerate() {
                        let rel = (sim - exp).abs() / exp;
                        assert!(
                            rel <= 1e-9,
                            "case {cases} flow {k}: engine {sim} vs oracle {exp} ({rel:e})"
                        );
                    }
                    cases += 1;
                }
            }
        }
    }
    assert_eq!(cases, 256);
    assert!(
        t0.elapsed().as_secs_f64() < 10.0,
        "criterion 3 exceeded 10 s"
    );
    pass(3, "network single-flow closed form and max-min oracle");
}

// ---------------------------------------------------------------- 4 ----

#[test]
fn criterion_4_collector_conformance() {
    let t0 = Instant::now();
    let p = Platform::homogeneous(2, 8, 1.0, 1.25e9, 1.0e-4).unwrap();
    let cfg = WorkflowConfig {
        total_iterations: 300,
        stride: 100,
        exchange_every: 20,
        n_ranks: 4,
        rank_iteration_work: 0.01,
        halo_bytes: 0.0,
        n_analytics_actors: 2,
        analytics_mapping: None,
        cost_per_particle: 7.93e-7,
        compute_scale: 1.0,
        size_per_particle: 100.0,
        data_scale: 1.0,
        n_particles: 1_000_000,
        dtl_mode: QueueMode::Instantaneous,
    };
    let ranks = spread(&p, 4, 2);
    let actors = spread(&p, 2, 1);
    let out = workflow::run(&p, &cfg, &ranks, &actors, &RunOptions::default()).unwrap();

    // Poisoned shutdown leaves no blocked actor.
    assert!(out.all_terminated, "actors left blocked after shutdown");

    // Collector behavior, checked from the trace.
    let mut fires = 0;
    let mut recv_since_fire = 0;
    let mut puts_of_fire = Vec::new();
    let mut puts_since_fire = 0;
    for ev in &out.trace {
        if ev.label != Label::Other {
            continue;
        }
        if ev.detail.starts_with("collector_recv") {
            recv_since_fire += 1;
        } else if ev.detail.starts_with("collector_fire") {
            fires += 1;
            assert_eq!(recv_since_fire, 4, "fire after {recv_since_fire} metrics");
            recv_since_fire = 0;
            if fires > 1 {
                puts_of_fire.push(puts_since_fire);
            }
            puts_since_fire = 0;
        } else if ev.detail.starts_with("collector_put") {
            puts_since_fire += 1;
        }
    }
    puts_of_fire.push(puts_since_fire);
    assert_eq!(fires, 3, "collector fired {fires} times, wanted rho = 3");
    assert_eq!(puts_of_fire, vec![4, 4, 4], "result copies per firing");

    // Conservation over every queue.
    for (name, stats) in &out.queue_stats {
        assert_eq!(stats.puts, stats.gets, "queue {name}: {stats:?}");
    }
    assert!(t0.elapsed().as_secs_f64() < 1.0, "criterion 4 exceeded 1 s");
    pass(4, "analytics/collector conformance and clean shutdown");
}

// ---------------------------------------------------------------- 5 ----

#[test]
fn criterion_5_ratio_table_for_32_cores() {
    let table = generate_ratio_allocations(32).unwrap();
    let got: Vec<(u32, u32, u32)> = table
        .iter()
        .map(|a| (a.r, a.sim_cores_per_node, a.ana_cores_per_node))
        .collect();
    assert_eq!(
        got,
        vec![
            (1, 16, 16),
            (3, 24, 8),
            (7, 28, 4),
            (15, 30, 2),
            (31, 31, 1)
        ]
    );
    pass(5, "core-allocation ratio table for 32-core nodes");
}

// ---------------------------------------------------------------- 6 ----

fn fig7_platform() -> Platform {
    // Loopback 100x the 10 Gb/s network.
    let nodes = (0..16)
        .map(|i| NodeSpec {
            name: format!("n{i}"),
            cores: 32,
            core_speed: 1.0,
            loopback_bandwidth: 1.25e11,
            loopback_latency: 1.0e-7,
        })
        .collect();
    let links = vec![
        LinkSpec {
            name: "backbone".into(),
            bandwidth: 1.25e9,
            latency: 1.0e-4,
        },
        LinkSpec {
            name: "access".into(),
            bandwidth: 1.25e9,
            latency: 1.0e-4,
        },
    ];
    Platform::new(Topology::Star, nodes, links).unwrap()
}

fn fig7_scenario() -> Scenario {
    Scenario {
        name: "data-scaling".into(),
        platform: "unused".into(),
        nodes: 16,
        ratio: 15,
        stride: 1000,
        cost_scale: 50.0,
        mapping: MappingMode::InTransit { dedicated_nodes: 1 },
        data_scale: 1.0,
        dtl: QueueMode::Mailbox,
        repetitions: 1,
        scatter_alpha: 0.05,
        jitter: 0.0,
        seed: 0,
        workload: Workload {
            iterations: 8000,
            particles: 1_000_000,
            cost_per_particle: 7.93e-7,
            size_per_particle: 100.0,
            rank_iteration_work: 0.002,
            halo_bytes: 0.0,
            exchange_every: 20,
        },
    }
}

#[test]
fn criterion_6_data_scaling_trend() {
    let t0 = Instant::now();
    let p = fig7_platform();
    let scales = [1.0, 10.0, 100.0, 500.0, 1000.0];
    let rows = compare_data_scaling(&fig7_scenario(), &p, &scales).unwrap();

    let time_of = |mode: &str, scale: f64| {
        rows.iter()
            .find(|r| r.mode.to_string() == mode && r.scale == scale)
            .unwrap()
            .sim_time
    };

    // In-transit grows linearly over the top three scales.
    let top: Vec<(f64, f64)> = scales[2..]
        .iter()
        .map(|&s| (s, time_of("in-transit", s)))
        .collect();
    let n = top.len() as f64;
    let mean_x = top.iter().map(|(x, _)| x).sum::<f64>() / n;
    let mean_y = top.iter().map(|(_, y)| y).sum::<f64>() / n;
    let sxy: f64 = top.iter().map(|(x, y)| (x - mean_x) * (y - mean_y)).sum();
    let sxx: f64 = top.iter().map(|(x, _)| (x - mean_x).powi(2)).sum();
    let slope = sxy / sxx;
    let ss_tot: f64 = top.iter().map(|(_, y)| (y - mean_y).powi(2)).sum();
    let ss_res: f64 = top
        .iter()
        .map(|(x, y)| (y - (mean_y + slope * (x - mean_x))).powi(2))
        .sum();
    let r2 = 1.0 - ss_res / ss_tot;
    assert!(slope > 0.0, "in-transit slope {slope} not positive");
    assert!(r2 >= 0.98, "in-transit linearity r2 = {r2}");

    // In-situ is only slightly impacted by the data volume.
    let insitu_1 = time_of("in-situ", 1.0);
    let insitu_1000 = time_of("in-situ", 1000.0);
    assert!(
        insitu_1000 < 1.10 * insitu_1,
        "in-situ grew {insitu_1} -> {insitu_1000}"
    );

    // The two curves cross somewhere in the sweep.
    let signs: Vec<bool> = scales
        .iter()
        .map(|&s| time_of("in-situ", s) > time_of("in-transit", s))
        .collect();
    assert!(
        signs.iter().any(|&x| x) && signs.iter().any(|&x| !x),
        "mode curves never cross: {signs:?}"
    );

    assert!(
        t0.elapsed().as_secs_f64() < 120.0,
        "criterion 6 exceeded 2 min"
    );
    pass(6, "in-situ vs in-transit data-scaling trend");
}

// ---------------------------------------------------------------- 7 ----

#[test]
fn criterion_7_ratio_sweep_trend() {
    let t0 = Instant::now();
    let p = Platform::homogeneous(8, 32, 1.0, 1.25e9, 1.0e-4).unwrap();
    let workload = Workload {
        iterations: 8000,
        particles: 1_000_000,
        cost_per_particle: 7.93e-7,
        size_per_particle: 100.0,
        rank_iteration_work: 0.004,
        halo_bytes: 0.0,
        exchange_every: 20,
    };
    for nodes in [1usize, 2, 4, 8] {
        let mut prev_ana_active = -1.0;
        for r in [1u32, 3, 7, 15, 31] {
            let s = Scenario {
                name: format!("ratios-n{nodes}-r{r}"),
                platform: "unused".into(),
                nodes,
                ratio: r,
                stride: 1000,
                cost_scale: 50.0,
                mapping: MappingMode::InSitu,
                data_scale: 1.0,
                dtl: QueueMode::Instantaneous,
                repetitions: 1,
                scatter_alpha: 0.0,
                jitter: 0.0,
                seed: 0,
                workload: workload.clone(),
            };
            let res = run_scenario(&s, &p).unwrap();
            let ct = res.component_times;
            if r == 1 {
                // The simulation dominates: its active time is the largest share.
                for (name, other) in [
                    ("sim_idle", ct.sim_idle),
                    ("ana_active", ct.ana_active),
                    ("ana_idle", ct.ana_idle),
                ] {
                    assert!(
                        ct.sim_active >= other,
                        "nodes={nodes} R=1: sim_active {} < {name} {other}",
                        ct.sim_active
                    );
                }
            }
            assert!(
                ct.ana_active > prev_ana_active,
                "nodes={nodes} R={r}: analytics active time not growing"
            );
            prev_ana_active = ct.ana_active;
            if r == 31 && nodes >= 2 {
                assert!(
                    res.idle_s_measured > 0.0,
                    "nodes={nodes} R=31: simulation never idles"
                );
            }
        }
    }
    assert!(
        t0.elapsed().as_secs_f64() < 120.0,
        "criterion 7 exceeded 2 min"
    );
    pass(7, "active/idle decomposition trends over the ratio sweep");
}

// ---------------------------------------------------------------- 8 ----

#[test]
fn criterion_8_determinism() {
    let run_once = || -> (Vec<u8>, Vec<u8>) {
        let p = fig7_platform();
        let mut s = fig7_scenario();
        s.dtl = QueueMode::Mailbox;
        s.workload.halo_bytes = 65536.0;
        s.workload.exchange_every = 200;
        let (result, outcome) = run_scenario_traced(&s, &p).unwrap();
        let mut trace = Vec::new();
        write_trace_csv(&outcome.trace, &mut trace).unwrap();
        let mut report = Vec::new();
        export_report(&[result], &mut report).unwrap();
        (trace, report)
    };
    let (trace_a, report_a) = run_once();
    let (trace_b, report_b) = run_once();
    assert_eq!(trace_a, trace_b, "trace files differ between runs");
    assert_eq!(report_a, report_b, "report files differ between runs");
    pass(8, "byte-identical traces and reports across runs");
}

// ---------------------------------------------------------------- 9 ----

fn peak_rss_bytes() -> Option<u64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with("VmHWM"))?;
    let kb: u64 = line.split_whitespace().nth(1)?.parse().ok()?;
    Some(kb * 1024)
}

#[test]
fn criterion_9_scale_and_throughput() {
    let t0 = Instant::now();
    let p = Platform::homogeneous(8, 32, 1.0, 1.25e9, 1.0e-4).unwrap();
    let cfg = WorkflowConfig {
        total_iterations: 8000,
        stride: 1000,
        exchange_every: 100,
        n_ranks: 256,
        rank_iteration_work: 0.004,
        halo_bytes: 65536.0,
        n_analytics_actors: 8,
        analytics_mapping: None,
        cost_per_particle: 7.93e-7,
        compute_scale: 50.0,
        size_per_particle: 100.0,
        data_scale: 1.0,
        n_particles: 1_000_000,
        dtl_mode: QueueMode::Mailbox,
    };
    let ranks = Mapping::new(p.node_ids().map(|n| (n, 32)).collect());
    let actors = Mapping::new(p.node_ids().map(|n| (n, 1)).collect());
    let opts = RunOptions {
        allow_oversubscribe: true,
        ..RunOptions::default()
    };
    let out = workflow::run(&p, &cfg, &ranks, &actors, &opts).unwrap();
    assert!(out.all_terminated);
    assert!(out.end_time > 0.0);

    let wall = t0.elapsed().as_secs_f64();
    assert!(wall < 60.0, "256-rank scenario took {wall:.1} s");
    if let Some(rss) = peak_rss_bytes() {
        assert!(
            rss < 1024 * 1024 * 1024,
            "peak RSS {} MiB exceeds 1 GiB",
            rss / (1024 * 1024)
        );
    }
    pass(9, "256-rank mailbox scenario within time and memory budget");
}

// --------------------------------------------------------- trace event --

/// The trace type is part of the external surface; pin its field layout.
#[test]
fn trace_events_expose_time_actor_label_detail_seq() {
    let e = TraceEvent {
        time: 1.0,
        actor: 3,
        label: Label::Se,
        detail: "start step=2".into(),
        seq: 9,
    };
    let mut buf = Vec::new();
    write_trace_csv(std::slice::from_ref(&e), &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(
        text,
        "time,actor,label,detail,seq\n1.000000000,3,Se,start step=2,9\n"
    );
}
