//! Cryptokey routing: allowed-IP blocks mapped to peers, longest prefix wins.

use std::net::Ipv4Addr;

use ipnet::Ipv4Net;

#[derive(Clone, Debug)]
pub struct AllowedIps<T> {
    /// Kept sorted by descending prefix length so the first hit is the longest.
    entries: Vec<(Ipv4Net, T)>,
}

impl<T> Default for AllowedIps<T> {
    fn default() -> Self {
        AllowedIps {
            entries: Vec::new(),
        }
    }
}

impl<T: Copy + PartialEq> AllowedIps<T> {
    pub fn insert(&mut self, net: Ipv4Net, value: T) {
        let net = net.trunc();
        self.entries.retain(|(n, _)| *n != net);
        let pos = self
            .entries
            .iter()
            .position(|(n, _)| n.prefix_len() < net.prefix_len())
            .unwrap_or(self.entries.len());
        self.entries.insert(pos, (net, value));
    }

    pub fn longest_match(&self, addr: Ipv4Addr) -> Option<T> {
        self.entries
            .iter()
            .find(|(n, _)| n.contains(&addr))
            .map(|(_, v)| *v)
    }

    /// Every entry whose block contains `addr`, longest first.
    pub fn all_matches(&self, addr: Ipv4Addr) -> impl Iterator<Item = T> + '_ {
        self.entries
            .iter()
            .filter(move |(n, _)| n.contains(&addr))
            .map(|(_, v)| *v)
    }

    /// True if any existing block overlaps `net` under a value other than `owner`.
    pub fn overlaps_other(&self, net: &Ipv4Net, owner: T) -> bool {
        self.entries
            .iter()
            .any(|(n, v)| *v != owner && (n.contains(net) || net.contains(n)))
    }

    pub fn blocks_of(&self, value: T) -> impl Iterator<Item = Ipv4Net> + '_ {
        self.entries
            .iter()
            .filter(move |(_, v)| *v == value)
            .map(|(n, _)| *n)
    }
}
