//! Fluid network model with progressive max-min fair sharing.
//!
//! Each flow occupies every link of its route. Whenever a flow arrives or
//! departs, bandwidth is redistributed: the most contended link is
//! saturated first, the flows it bottlenecks are fixed at an equal share,
//! and the procedure repeats on the residual capacities until every flow
//! has a rate. Between two such events every flow drains at its assigned
//! rate, so completion times follow from simple division.

use crate::platform::LinkIndex;

pub(crate) type FlowId = usize;

#[derive(Debug)]
struct FlowSlot {
    route: Vec<LinkIndex>,
    remaining: f64,
    rate: f64,
    gen: u64,
    active: bool,
}

#[derive(Debug)]
pub(crate) struct FlowNetwork {
    caps: Vec<f64>,
    flows: Vec<FlowSlot>,
    active: Vec<FlowId>,
    last_drain: f64,
}

impl FlowNetwork {
    pub(crate) fn new(caps: Vec<f64>) -> Self {
        FlowNetwork {
            caps,
            flows: Vec::new(),
            active: Vec::new(),
            last_drain: 0.0,
        }
    }

    /// Registers a flow that is still in its latency phase. It consumes no
    /// bandwidth until [`activate`](Self::activate) is called.
    pub(crate) fn create(&mut self, route: Vec<LinkIndex>, size: f64) -> FlowId {
        let id = self.flows.len();
        self.flows.push(FlowSlot {
            route,
            remaining: size,
            rate: 0.0,
            gen: 0,
            active: false,
        });
        id
    }

    pub(crate) fn activate(&mut self, id: FlowId, now: f64) {
        self.drain_to(now);
        debug_assert!(!self.flows[id].active);
        self.flows[id].active = true;
        self.active.push(id);
    }

    /// Removes a finished flow from the active set.
    pub(crate) fn complete(&mut self, id: FlowId, now: f64) {
        self.drain_to(now);
        self.flows[id].active = false;
        self.flows[id].route = Vec::new();
        self.active.retain(|&f| f != id);
    }

    pub(crate) fn gen(&self, id: FlowId) -> u64 {
        self.flows[id].gen
    }

    pub(crate) fn is_active(&self, id: FlowId) -> bool {
        self.flows[id].active
    }

    /// Advances all active flows to `now` at their current rates.
    fn drain_to(&mut self, now: f64) {
        let dt = now - self.last_drain;
        if dt > 0.0 {
            for &id in &self.active {
                let f = &mut self.flows[id];
                f.remaining = (f.remaining - f.rate * dt).max(0.0);
            }
        }
        self.last_drain = now;
    }

    /// Recomputes the max-min allocation and returns the new completion
    /// estimate of every active flow, tagged with a generation number that
    /// invalidates previously scheduled completions.
    pub(crate) fn rebalance(&mut self, now: f64) -> Vec<(FlowId, f64, u64)> {
        self.drain_to(now);
        let rates = self.maxmin();
        let mut out = Vec::with_capacity(self.active.len());
        for (k, &id) in self.active.iter().enumerate() {
            let f = &mut self.flows[id];
            f.rate = rates[k];
            f.gen += 1;
            let completion = now + f.remaining / f.rate;
            out.push((id, completion, f.gen));
        }
        out
    }

    /// Progressive filling over the active flows, in active-set order.
    fn maxmin(&self) -> Vec<f64> {
        let n = self.active.len();
        let mut rem_cap = self.caps.clone();
        let mut count = vec![0usize; self.caps.len()];
        for &id in &self.active {
            for &l in &self.flows[id].route {
                count[l] += 1;
            }
        }
        let mut rates = vec![0.0; n];
        let mut fixed = vec![false; n];
        let mut n_fixed = 0;
        while n_fixed < n {
            let mut best: Option<(f64, LinkIndex)> = None;
            for (l, &c) in count.iter().enumerate() {
                if c > 0 {
                    let share = rem_cap[l] / c as f64;
                    if best.is_none_or(|(s, _)| share < s) {
                        best = Some((share, l));
                    }
                }
            }
            let (share, bottleneck) = best.expect("unfixed flow with empty route");
            for (k, &id) in self.active.iter().enumerate() {
                if !fixed[k] && self.flows[id].route.contains(&bottleneck) {
                    fixed[k] = true;
                    n_fixed += 1;
                    rates[k] = share;
                    for &l in &self.flows[id].route {
                        count[l] -= 1;
                        rem_cap[l] -= share;
                    }
                }
            }
        }
        rates
    }

    #[cfg(test)]
    fn link_loads(&self) -> Vec<f64> {
        let mut loads = vec![0.0; self.caps.len()];
        for &id in &self.active {
            for &l in &self.flows[id].route {
                loads[l] += self.flows[id].rate;
            }
        }
        loads
    }
}
