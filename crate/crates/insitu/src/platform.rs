//! Description of the simulated cluster: nodes, cores, links and routing.
//!
//! A platform is loaded once from a TOML file (or built programmatically),
//! validated, and then shared read-only by any number of simulation
//! instances. Two topologies are supported: `flat`, where every node pair
//! communicates over a single shared link, and `star`, where each pair
//! crosses the source access link, a shared backbone, and the destination
//! access link. Same-node communications always go through a per-node
//! loopback pseudo-link that models a memory copy.

use std::fmt;
use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};

/// Default loopback bandwidth: 16 GiB/s, orders of magnitude above a
/// 10 Gb/s Ethernet link.
pub const DEFAULT_LOOPBACK_BANDWIDTH: f64 = 16.0 * 1024.0 * 1024.0 * 1024.0;
/// Default loopback latency in seconds.
pub const DEFAULT_LOOPBACK_LATENCY: f64 = 1.0e-7;

/// Index of a node within a platform.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub(crate) usize);

impl NodeId {
    /// Wraps a raw index; routing and spawning validate it against the
    /// platform.
    pub fn from_index(i: usize) -> NodeId {
        NodeId(i)
    }

    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Index of a link resource (explicit links, generated access links and
/// per-node loopbacks) within a platform.
pub type LinkIndex = usize;

/// One compute node.
#[derive(Debug, Clone)]
pub struct NodeSpec {
    pub name: String,
    pub cores: u32,
    /// Compute rate relative to a reference core (1.0 = reference).
    pub core_speed: f64,
    pub loopback_bandwidth: f64,
    pub loopback_latency: f64,
}

/// One network link.
#[derive(Debug, Clone)]
pub struct LinkSpec {
    pub name: String,
    /// Bytes per second.
    pub bandwidth: f64,
    /// Seconds.
    pub latency: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Topology {
    /// A single shared link between all node pairs.
    Flat,
    /// Per-node access link plus a shared backbone.
    Star,
}

/// A concrete link resource the engine allocates bandwidth on.
#[derive(Debug, Clone)]
pub struct LinkResource {
    pub name: String,
    pub bandwidth: f64,
    pub latency: f64,
    pub loopback: bool,
}

/// A validated cluster description.
#[derive(Debug, Clone)]
pub struct Platform {
    pub topology: Topology,
    pub nodes: Vec<NodeSpec>,
    pub links: Vec<LinkSpec>,
    resources: Vec<LinkResource>,
    /// For star: resources index of each node's access link.
    access: Vec<LinkIndex>,
    /// Resources index of each node's loopback.
    loopback: Vec<LinkIndex>,
    backbone: LinkIndex,
}

impl Platform {
    /// Validates the raw description and precomputes the link resource table.
    pub fn new(topology: Topology, nodes: Vec<NodeSpec>, links: Vec<LinkSpec>) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::Validation("platform has no nodes".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for n in &nodes {
            if !seen.insert(n.name.clone()) {
                return Err(Error::Validation(format!(
                    "duplicate node name: {}",
                    n.name
                )));
            }
            if n.cores == 0 {
                return Err(Error::Validation(format!("node {} has zero cores", n.name)));
            }
            if n.core_speed <= 0.0 {
                return Err(Error::Validation(format!(
                    "node {} has non-positive core speed",
                    n.name
                )));
            }
            if n.loopback_bandwidth <= 0.0 {
                return Err(Error::Validation(format!(
                    "node {} has non-positive loopback bandwidth",
                    n.name
                )));
            }
            if n.loopback_latency < 0.0 {
                return Err(Error::Validation(format!(
                    "node {} has negative loopback latency",
                    n.name
                )));
            }
        }
        for l in &links {
            if l.bandwidth <= 0.0 {
                return Err(Error::Validation(format!(
                    "link {} has non-positive bandwidth",
                    l.name
                )));
            }
            if l.latency < 0.0 {
                return Err(Error::Validation(format!(
                    "link {} has negative latency",
                    l.name
                )));
            }
        }

        let mut resources = Vec::new();
        let mut access = Vec::new();
        let backbone;
        match topology {
            Topology::Flat => {
                if links.len() != 1 {
                    return Err(Error::Validation(format!(
                        "flat topology needs exactly one link, got {}",
                        links.len()
                    )));
                }
                backbone = 0;
                resources.push(LinkResource {
                    name: links[0].name.clone(),
                    bandwidth: links[0].bandwidth,
                    latency: links[0].latency,
                    loopback: false,
                });
            }
            Topology::Star => {
                let bb = links.iter().find(|l| l.name == "backbone").ok_or_else(|| {
                    Error::Validation("star topology needs a 'backbone' link".into())
                })?;
                let acc = links.iter().find(|l| l.name == "access").ok_or_else(|| {
                    Error::Validation("star topology needs an 'access' link".into())
                })?;
                if links.len() != 2 {
                    return Err(Error::Validation(
                        "star topology takes exactly the 'backbone' and 'access' links".into(),
                    ));
                }
                backbone = 0;
                resources.push(LinkResource {
                    name: bb.name.clone(),
                    bandwidth: bb.bandwidth,
                    latency: bb.latency,
                    loopback: false,
                });
                for n in &nodes {
                    access.push(resources.len());
                    resources.push(LinkResource {
                        name: format!("access_{}", n.name),
                        bandwidth: acc.bandwidth,
                        latency: acc.latency,
                        loopback: false,
                    });
                }
            }
        }
        let mut loopback = Vec::new();
        for n in &nodes {
            loopback.push(resources.len());
            resources.push(LinkResource {
                name: format!("loopback_{}", n.name),
                bandwidth: n.loopback_bandwidth,
                latency: n.loopback_latency,
                loopback: true,
            });
        }

        Ok(Platform {
            topology,
            nodes,
            links,
            resources,
            access,
            loopback,
            backbone,
        })
    }

    /// A star cluster of `n_nodes` identical nodes, handy for tests and
    /// generated experiments.
    pub fn homogeneous(
        n_nodes: usize,
        cores_per_node: u32,
        core_speed: f64,
        link_bandwidth: f64,
        link_latency: f64,
    ) -> Result<Self> {
        let nodes = (0..n_nodes)
            .map(|i| NodeSpec {
                name: format!("n{i}"),
                cores: cores_per_node,
                core_speed,
                loopback_bandwidth: DEFAULT_LOOPBACK_BANDWIDTH,
                loopback_latency: DEFAULT_LOOPBACK_LATENCY,
            })
            .collect();
        let links = vec![
            LinkSpec {
                name: "backbone".into(),
                bandwidth: link_bandwidth,
                latency: link_latency,
            },
            LinkSpec {
                name: "access".into(),
                bandwidth: link_bandwidth,
                latency: link_latency,
            },
        ];
        Platform::new(Topology::Star, nodes, links)
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn total_cores(&self) -> u64 {
        self.nodes.iter().map(|n| n.cores as u64).sum()
    }

    /// Looks a node up by name.
    pub fn node_id(&self, name: &str) -> Result<NodeId> {
        self.nodes
            .iter()
            .position(|n| n.name == name)
            .map(NodeId)
            .ok_or_else(|| Error::UnknownNode(name.to_string()))
    }

    pub fn node(&self, id: NodeId) -> &NodeSpec {
        &self.nodes[id.0]
    }

    pub fn node_ids(&self) -> impl Iterator<Item = NodeId> {
        (0..self.nodes.len()).map(NodeId)
    }

    /// The concrete link resources (explicit links, access links, loopbacks).
    pub fn link_resources(&self) -> &[LinkResource] {
        &self.resources
    }

    /// Ordered links crossed by a transfer from `src` to `dst`. Same-node
    /// routes consist of exactly the node's loopback pseudo-link.
    pub fn route(&self, src: NodeId, dst: NodeId) -> Result<Vec<LinkIndex>> {
        let n = self.nodes.len();
        if src.0 >= n {
            return Err(Error::UnknownNode(format!("#{}", src.0)));
        }
        if dst.0 >= n {
            return Err(Error::UnknownNode(format!("#{}", dst.0)));
        }
        if src == dst {
            return Ok(vec![self.loopback[src.0]]);
        }
        match self.topology {
            Topology::Flat => Ok(vec![self.backbone]),
            Topology::Star => Ok(vec![self.access[src.0], self.backbone, self.access[dst.0]]),
        }
    }

    /// Sum of link latencies along a route.
    pub fn route_latency(&self, route: &[LinkIndex]) -> f64 {
        route.iter().map(|&l| self.resources[l].latency).sum()
    }
}

/// Parses a bandwidth given either as plain bytes/second or as a string with
/// a unit suffix (`bps`/`Kbps`/`Mbps`/`Gbps` in bits, `Bps`/`KBps`/`MBps`/
/// `GBps` decimal bytes, `KiBps`/`MiBps`/`GiBps` binary bytes).
pub fn parse_bandwidth(s: &str) -> Result<f64> {
    let s = s.trim();
    let table: &[(&str, f64)] = &[
        ("GiBps", 1024.0 * 1024.0 * 1024.0),
        ("MiBps", 1024.0 * 1024.0),
        ("KiBps", 1024.0),
        ("GBps", 1.0e9),
        ("MBps", 1.0e6),
        ("KBps", 1.0e3),
        ("Bps", 1.0),
        ("Gbps", 1.0e9 / 8.0),
        ("Mbps", 1.0e6 / 8.0),
        ("Kbps", 1.0e3 / 8.0),
        ("bps", 1.0 / 8.0),
    ];
    for (suffix, factor) in table {
        if let Some(num) = s.strip_suffix(suffix) {
            let v: f64 = num
                .trim()
                .parse()
                .map_err(|_| Error::Validation(format!("bad bandwidth value: {s}")))?;
            if v <= 0.0 {
                return Err(Error::Validation(format!("non-positive bandwidth: {s}")));
            }
            return Ok(v * factor);
        }
    }
    let v: f64 = s
        .parse()
        .map_err(|_| Error::Validation(format!("bad bandwidth value: {s}")))?;
    if v <= 0.0 {
        return Err(Error::Validation(format!("non-positive bandwidth: {s}")));
    }
    Ok(v)
}

#[derive(Deserialize)]
#[serde(untagged)]
enum BandwidthValue {
    Number(f64),
    Text(String),
}

impl BandwidthValue {
    fn to_bytes_per_sec(&self) -> Result<f64> {
        match self {
            BandwidthValue::Number(v) => {
                if *v <= 0.0 {
                    Err(Error::Validation(format!("non-positive bandwidth: {v}")))
                } else {
                    Ok(*v)
                }
            }
            BandwidthValue::Text(s) => parse_bandwidth(s),
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeFile {
    name: String,
    #[serde(default = "one")]
    count: usize,
    cores: u32,
    #[serde(default = "one_f64")]
    core_speed: f64,
    loopback_bandwidth: Option<BandwidthValue>,
    loopback_latency: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LinkFile {
    name: String,
    bandwidth: BandwidthValue,
    #[serde(default)]
    latency: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PlatformFile {
    topology: String,
    nodes: Vec<NodeFile>,
    links: Vec<LinkFile>,
}

fn one() -> usize {
    1
}

fn one_f64() -> f64 {
    1.0
}

/// Loads and validates a platform file.
///
/// Node blocks with `count > 1` expand into `count` identical nodes named
/// `<name>0 .. <name>{count-1}`.
pub fn load_platform<P: AsRef<Path>>(path: P) -> Result<Platform> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    parse_platform(&text, &path.display().to_string())
}

pub fn parse_platform(text: &str, origin: &str) -> Result<Platform> {
    let file: PlatformFile = toml::from_str(text).map_err(|e| Error::Parse {
        path: origin.to_string(),
        msg: e.to_string(),
    })?;
    let topology = match file.topology.as_str() {
        "flat" => Topology::Flat,
        "star" => Topology::Star,
        other => {
            return Err(Error::Parse {
                path: origin.to_string(),
                msg: format!("unknown topology: {other}"),
            })
        }
    };
    let mut nodes = Vec::new();
    for n in &file.nodes {
        let bw = match &n.loopback_bandwidth {
            Some(v) => v.to_bytes_per_sec()?,
            None => DEFAULT_LOOPBACK_BANDWIDTH,
        };
        let lat = n.loopback_latency.unwrap_or(DEFAULT_LOOPBACK_LATENCY);
        if n.count == 0 {
            return Err(Error::Validation(format!("node {} has count 0", n.name)));
        }
        for i in 0..n.count {
            let name = if n.count == 1 {
                n.name.clone()
            } else {
                format!("{}{}", n.name, i)
            };
            nodes.push(NodeSpec {
                name,
                cores: n.cores,
                core_speed: n.core_speed,
                loopback_bandwidth: bw,
                loopback_latency: lat,
            });
        }
    }
    let links = file
        .links
        .iter()
        .map(|l| {
            Ok(LinkSpec {
                name: l.name.clone(),
                bandwidth: l.bandwidth.to_bytes_per_sec()?,
                latency: l.latency,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Platform::new(topology, nodes, links)
}
