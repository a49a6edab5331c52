//! Communication layer: turns per-device caches into one shared cache.
//!
//! Each device splits its minibatch by owner, the sub-lists are exchanged at
//! a barrier, every owner serves its inbox from its own cache, and responses
//! travel back to be reassembled in the requester's order.

use crate::cache::{EvictionOutcome, ReuseClass, SoftwareCache};
use crate::feature::{Feature, FeatureBlock};
use crate::graph::StaticScoreTable;
use crate::pvp::{EnqueueOutcome, PrefetchBuffer, VictimBufferSet};
use crate::sampler::MiniBatch;
use crate::{DeviceId, Error, NodeId, Result};

/// Maps a node to the device whose cache serves it.
pub trait OwnerHash {
    fn num_devices(&self) -> usize;
    fn owner(&self, node: NodeId) -> DeviceId;
    /// Divisor applied to node IDs before set indexing inside an owner's
    /// cache, so an owner's residue class covers all sets.
    fn set_stride(&self) -> usize;
}

/// `owner(v) = v mod num_devices`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StrideHash {
    devices: usize,
}

impl StrideHash {
    pub fn new(devices: usize) -> Result<Self> {
        if devices == 0 || devices > crate::MAX_DEVICES {
            return Err(Error::config(format!("device count {devices} out of range")));
        }
        Ok(StrideHash { devices })
    }
}

impl OwnerHash for StrideHash {
    fn num_devices(&self) -> usize {
        self.devices
    }

    fn owner(&self, node: NodeId) -> DeviceId {
        node as usize % self.devices
    }

    fn set_stride(&self) -> usize {
        self.devices
    }
}

/// Routes every node to device 0: a single cache shared by all requesters.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SingleOwner {
    devices: usize,
}

impl SingleOwner {
    pub fn new(devices: usize) -> Result<Self> {
        if devices == 0 || devices > crate::MAX_DEVICES {
            return Err(Error::config(format!("device count {devices} out of range")));
        }
        Ok(SingleOwner { devices })
    }
}

impl OwnerHash for SingleOwner {
    fn num_devices(&self) -> usize {
        self.devices
    }

    fn owner(&self, _node: NodeId) -> DeviceId {
        0
    }

    fn set_stride(&self) -> usize {
        1
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RoutedRequest {
    pub node: NodeId,
    pub origin_device: DeviceId,
    /// Position of `node` in the origin's minibatch.
    pub origin_index: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RoutedResponse {
    pub origin_device: DeviceId,
    pub origin_index: u64,
    pub payload: Feature,
}

/// Splits `batch` into one sub-list per owner, keeping relative order.
pub fn split_by_hash(batch: &MiniBatch, hash: &dyn OwnerHash) -> Vec<Vec<RoutedRequest>> {
    let mut out = vec![Vec::new(); hash.num_devices()];
    for (i, &node) in batch.nodes.iter().enumerate() {
        out[hash.owner(node)].push(RoutedRequest {
            node,
            origin_device: batch.device,
            origin_index: i as u64,
        });
    }
    out
}

/// Delivers `splits[origin][owner]` into per-owner inboxes, origins in
/// ascending order. Callers pass every device's split for the iteration, so
/// this is the barrier.
pub fn exchange(splits: Vec<Vec<Vec<RoutedRequest>>>) -> Vec<Vec<RoutedRequest>> {
    let devices = splits.len();
    let mut inboxes: Vec<Vec<RoutedRequest>> = vec![Vec::new(); devices];
    for per_owner in splits {
        debug_assert_eq!(per_owner.len(), devices);
        for (owner, list) in per_owner.into_iter().enumerate() {
            inboxes[owner].extend(list);
        }
    }
    inboxes
}

/// Counters produced by serving one inbox.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ServeCounters {
    pub requests: u64,
    pub cache_hits: u64,
    pub prefetch_hits: u64,
    pub storage_fetches: u64,
    /// Requests whose origin is another device.
    pub remote_requests: u64,
    pub victim_enqueues: u64,
    pub victim_drops: u64,
    pub stale_drops: u64,
    pub evictions_by_class: [u64; 4],
}

/// Owner-side state needed to serve requests.
pub struct ServeContext<'a> {
    pub cache: &'a mut SoftwareCache,
    pub victims: Option<&'a mut VictimBufferSet>,
    /// Prefetch buffers of every device, indexed by device ID.
    pub prefetch: &'a mut [PrefetchBuffer],
    pub scores: &'a StaticScoreTable,
}

/// Resolves each request from, in order, the requester's prefetch buffer,
/// the owner's cache, or storage (which inserts the line).
pub fn serve(
    device: DeviceId,
    inbox: &[RoutedRequest],
    iteration: u64,
    ctx: &mut ServeContext<'_>,
) -> Result<(Vec<RoutedResponse>, ServeCounters)> {
    let mut counters = ServeCounters::default();
    let mut responses = Vec::with_capacity(inbox.len());
    let consistency = |msg: String| Error::Consistency {
        iteration,
        device,
        msg,
    };

    for req in inbox {
        counters.requests += 1;
        if req.origin_device != device {
            counters.remote_requests += 1;
        }
        let staged = ctx
            .prefetch
            .get_mut(req.origin_device)
            .ok_or_else(|| consistency(format!("unknown origin device {}", req.origin_device)))?
            .consume(req, iteration)?;

        let payload = if let Some(p) = staged {
            counters.prefetch_hits += 1;
            p
        } else if let Some(p) = ctx.cache.lookup(req.node) {
            counters.cache_hits += 1;
            p
        } else {
            counters.storage_fetches += 1;
            let score = ctx.scores.get(req.node);
            match ctx.cache.insert(req.node, score, iteration) {
                EvictionOutcome::None => {}
                EvictionOutcome::Dropped(victim) => {
                    let class = ReuseClass::of(&victim.dyn_state, iteration, ctx.cache.config().threshold);
                    counters.evictions_by_class[class.index()] += 1;
                }
                EvictionOutcome::Victimized(victim) => {
                    let class = ReuseClass::of(&victim.dyn_state, iteration, ctx.cache.config().threshold);
                    counters.evictions_by_class[class.index()] += 1;
                    let vbs = ctx.victims.as_deref_mut().ok_or_else(|| {
                        consistency("victimized line without victim buffers".into())
                    })?;
                    match vbs.enqueue_victim(&victim, iteration)? {
                        EnqueueOutcome::Accepted { .. } => counters.victim_enqueues += 1,
                        EnqueueOutcome::Dropped => counters.victim_drops += 1,
                        EnqueueOutcome::Stale => counters.stale_drops += 1,
                        EnqueueOutcome::Untagged => {}
                    }
                }
            }
            Feature::for_node(req.node)
        };
        responses.push(RoutedResponse {
            origin_device: req.origin_device,
            origin_index: req.origin_index,
            payload,
        });
    }
    Ok((responses, counters))
}

/// Places responses back into minibatch order.
pub fn assemble(
    batch: &MiniBatch,
    responses: &[RoutedResponse],
    dim: usize,
) -> Result<FeatureBlock> {
    let err = |msg: String| Error::Consistency {
        iteration: batch.iteration,
        device: batch.device,
        msg,
    };
    let mut rows: Vec<Option<Feature>> = vec![None; batch.nodes.len()];
    for r in responses {
        if r.origin_device != batch.device {
            return Err(err(format!("response for device {} delivered here", r.origin_device)));
        }
        let slot = rows
            .get_mut(r.origin_index as usize)
            .ok_or_else(|| err(format!("response index {} out of range", r.origin_index)))?;
        if slot.replace(r.payload).is_some() {
            return Err(err(format!("duplicate response for index {}", r.origin_index)));
        }
    }
    let rows = rows
        .into_iter()
        .zip(&batch.nodes)
        .enumerate()
        .map(|(i, (row, &node))| match row {
            None => Err(err(format!("missing response for index {i}"))),
            Some(p) if p.lead() != node => Err(err(format!(
                "index {i} expects node {node}, payload holds {}",
                p.lead()
            ))),
            Some(p) => Ok(p),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FeatureBlock::new(dim, rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cache::{CacheConfig, Policy};
    use crate::graph::quantize_scores;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn batch(device: DeviceId, nodes: Vec<NodeId>) -> MiniBatch {
        MiniBatch {
            iteration: 1,
            device,
            nodes,
        }
    }

    fn req(node: NodeId, origin_device: DeviceId, origin_index: u64) -> RoutedRequest {
        RoutedRequest {
            node,
            origin_device,
            origin_index,
        }
    }

    fn cache(capacity: usize, stride: usize) -> SoftwareCache {
        SoftwareCache::new(
            CacheConfig {
                ways: 4,
                capacity_lines: capacity,
                policy: Policy::Hybrid,
                pvp_enabled: false,
                threshold: 4,
                update_period: 4,
            },
            1_000,
            stride,
        )
        .unwrap()
    }

    #[test]
    fn split_by_parity() {
        let h = StrideHash::new(2).unwrap();
        let s = split_by_hash(&batch(0, vec![9, 4, 2, 7]), &h);
        assert_eq!(s[0], vec![req(4, 0, 1), req(2, 0, 2)]);
        assert_eq!(s[1], vec![req(9, 0, 0), req(7, 0, 3)]);
    }

    #[test]
    fn single_device_split_is_identity() {
        let h = StrideHash::new(1).unwrap();
        let s = split_by_hash(&batch(0, vec![3, 1, 2]), &h);
        assert_eq!(s, vec![vec![req(3, 0, 0), req(1, 0, 1), req(2, 0, 2)]]);
    }

    #[test]
    fn exchange_counts() {
        let h = StrideHash::new(2).unwrap();
        let b0 = batch(0, vec![0, 1, 2, 3, 5]);
        let b1 = batch(1, vec![4, 6, 7]);
        let inboxes = exchange(vec![split_by_hash(&b0, &h), split_by_hash(&b1, &h)]);
        assert_eq!(inboxes[0].len(), 2 + 2);
        assert_eq!(inboxes[1].len(), 3 + 1);
        assert!(inboxes[0].iter().all(|r| r.node % 2 == 0));
        // origin 0 first
        assert_eq!(inboxes[1][0], req(1, 0, 1));
        assert_eq!(inboxes[1][3], req(7, 1, 2));
    }

    #[test]
    fn serve_cold_then_warm() {
        let scores = quantize_scores(&vec![1.0; 1_000]).unwrap();
        let mut c = cache(64, 1);
        let mut prefetch = vec![PrefetchBuffer::new(0), PrefetchBuffer::new(1)];
        // node 5 requested by both origins
        let inbox = vec![req(5, 0, 0), req(8, 0, 1), req(5, 1, 3)];
        let mut ctx = ServeContext {
            cache: &mut c,
            victims: None,
            prefetch: &mut prefetch,
            scores: &scores,
        };
        let (resp, counters) = serve(0, &inbox, 1, &mut ctx).unwrap();
        assert_eq!(counters.storage_fetches, 2);
        assert_eq!(counters.cache_hits, 1);
        assert_eq!(counters.remote_requests, 1);
        assert!(resp.iter().zip(&inbox).all(|(r, q)| r.payload.lead() == q.node));
        let (_, counters) = serve(0, &inbox, 2, &mut ctx).unwrap();
        assert_eq!(counters.storage_fetches, 0);
        assert_eq!(counters.cache_hits, 3);
    }

    #[test]
    fn assemble_in_batch_order() {
        let b = batch(0, vec![9, 4, 2, 7]);
        let mut resp: Vec<_> = b
            .nodes
            .iter()
            .enumerate()
            .map(|(i, &v)| RoutedResponse {
                origin_device: 0,
                origin_index: i as u64,
                payload: Feature::for_node(v),
            })
            .collect();
        resp.reverse();
        let block = assemble(&b, &resp, 4).unwrap();
        let lead: Vec<_> = block.rows().iter().map(|f| f.element(0)).collect();
        assert_eq!(lead, vec![9.0, 4.0, 2.0, 7.0]);
        assert_eq!(block.to_dense().len(), 16);

        let one = batch(0, vec![3]);
        let r = [RoutedResponse { origin_device: 0, origin_index: 0, payload: Feature::for_node(3) }];
        assert_eq!(assemble(&one, &r, 2).unwrap().len(), 1);
    }

    #[test]
    fn assemble_rejects_missing_and_duplicate() {
        let b = batch(0, vec![1, 2]);
        let r = RoutedResponse { origin_device: 0, origin_index: 0, payload: Feature::for_node(1) };
        assert!(matches!(assemble(&b, &[r], 1), Err(Error::Consistency { .. })));
        assert!(matches!(assemble(&b, &[r, r], 1), Err(Error::Consistency { .. })));
        let wrong = RoutedResponse { origin_index: 1, ..r };
        assert!(matches!(assemble(&b, &[r, wrong], 1), Err(Error::Consistency { .. })));
    }

    #[test]
    fn owner_partition_doubles_resident_capacity() {
        let h = StrideHash::new(2).unwrap();
        let scores = quantize_scores(&vec![1.0; 1_000]).unwrap();
        let mut caches = [cache(32, 2), cache(32, 2)];
        let mut prefetch = vec![PrefetchBuffer::new(0), PrefetchBuffer::new(1)];
        let b = batch(0, (0..64).collect());
        let inboxes = exchange(vec![split_by_hash(&b, &h), vec![vec![], vec![]]]);
        for (d, c) in caches.iter_mut().enumerate() {
            let mut ctx = ServeContext { cache: c, victims: None, prefetch: &mut prefetch, scores: &scores };
            serve(d, &inboxes[d], 1, &mut ctx).unwrap();
        }
        let resident: usize = caches.iter().map(|c| c.resident_lines()).sum();
        assert_eq!(resident, 64);
    }

    proptest! {
        #[test]
        fn split_exchange_serve_assemble_is_identity(
            raw in proptest::collection::hash_set(0u32..1_000, 1..120),
            devices in 1usize..5,
            seed in any::<u64>(),
        ) {
            let mut nodes: Vec<_> = raw.into_iter().collect();
            nodes.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let h = StrideHash::new(devices).unwrap();
            let scores = quantize_scores(&vec![1.0; 1_000]).unwrap();
            let batches: Vec<_> = (0..devices).map(|d| {
                let mut n = nodes.clone();
                n.rotate_left(d % nodes.len());
                MiniBatch { iteration: 1, device: d, nodes: n }
            }).collect();
            let splits: Vec<_> = batches.iter().map(|b| split_by_hash(b, &h)).collect();
            for (b, s) in batches.iter().zip(&splits) {
                let mut all: Vec<_> = s.iter().flatten().copied().collect();
                all.sort_by_key(|r| r.origin_index);
                prop_assert_eq!(all.iter().map(|r| r.node).collect::<Vec<_>>(), b.nodes.clone());
            }
            let inboxes = exchange(splits);
            prop_assert_eq!(inboxes.iter().map(Vec::len).sum::<usize>(), devices * nodes.len());
            let mut caches: Vec<_> = (0..devices).map(|_| cache(16, devices)).collect();
            let mut prefetch: Vec<_> = (0..devices).map(PrefetchBuffer::new).collect();
            let mut per_origin = vec![Vec::new(); devices];
            for (d, c) in caches.iter_mut().enumerate() {
                let mut ctx = ServeContext { cache: c, victims: None, prefetch: &mut prefetch, scores: &scores };
                let (resp, counters) = serve(d, &inboxes[d], 1, &mut ctx).unwrap();
                prop_assert_eq!(counters.requests, counters.cache_hits + counters.prefetch_hits + counters.storage_fetches);
                for r in resp { per_origin[r.origin_device].push(r); }
            }
            for (b, resp) in batches.iter().zip(&per_origin) {
                let block = assemble(b, resp, 8).unwrap();
                let lead: Vec<_> = block.rows().iter().map(|f| f.lead()).collect();
                prop_assert_eq!(&lead, &b.nodes);
            }
        }
    }
}
