use std::collections::BTreeSet;

use racetee::crypto::{hash, Digest, SigningKeyPair};
use racetee::rng::DetRng;
use racetee::storage::{
    select_subnet, sign_ack, subnet_seed, verify_receipt, BlobKind, BlobStore, Dissemination, StorageBlob,
    StorageError,
};
use racetee::types::Address;

struct Net {
    keys: Vec<SigningKeyPair>,
    addrs: Vec<Address>,
}

fn net(n: usize) -> Net {
    let mut rng = DetRng::from_u64(77);
    let keys: Vec<SigningKeyPair> = (0..n).map(|_| SigningKeyPair::generate(&mut rng)).collect();
    let addrs = keys.iter().map(|k| Address::from_public_key(&k.public().0)).collect();
    Net { keys, addrs }
}

impl Net {
    fn key_of(&self, a: &Address) -> Option<racetee::crypto::VerifyingKey> {
        self.addrs.iter().position(|x| x == a).map(|i| self.keys[i].public())
    }
}

#[test]
fn subnets_are_distinct_and_seeded() {
    for n in 1..=30usize {
        for s in 0..=n {
            let seed = hash(&[n as u8, s as u8]);
            let v = select_subnet(&seed, n, s).unwrap();
            let set: BTreeSet<_> = v.iter().collect();
            assert_eq!(set.len(), s);
            assert!(v.iter().all(|&x| (x as usize) < n));
            assert_eq!(v, select_subnet(&seed, n, s).unwrap());
        }
    }
    assert_eq!(select_subnet(&hash(b"x"), 3, 4), Err(StorageError::SubnetTooLarge { s: 4, n: 3 }));
}

#[test]
fn subnet_membership_is_uniform() {
    let (n, s, draws) = (10usize, 4usize, 20_000u64);
    let mut counts = vec![0u64; n];
    for i in 0..draws {
        for x in select_subnet(&subnet_seed(&hash(&i.to_be_bytes()), &hash(b"blob")), n, s).unwrap() {
            counts[x as usize] += 1;
        }
    }
    let p = s as f64 / n as f64;
    let sigma = (p * (1.0 - p) / draws as f64).sqrt();
    for (i, &k) in counts.iter().enumerate() {
        let f = k as f64 / draws as f64;
        assert!((f - p).abs() < 5.0 * sigma, "node {i}: {f}");
    }
}

#[test]
fn distinct_blobs_get_distinct_subnets() {
    let round = hash(b"round");
    assert_ne!(subnet_seed(&round, &hash(b"a")), subnet_seed(&round, &hash(b"b")));
}

#[test]
fn receipt_after_threshold_acks() {
    let net = net(8);
    let digest = hash(b"state blob");
    let subnet = select_subnet(&hash(b"seed"), 8, 4).unwrap();
    let mut d = Dissemination::new(digest, subnet.clone(), 3, 100);
    assert!(d.receipt().is_err());
    for &i in subnet.iter().rev() {
        let i = i as usize;
        assert!(d.on_ack(sign_ack(&net.keys[i], i as u32, net.addrs[i], &digest), &net.keys[i].public()));
    }
    assert!(d.is_complete());
    let r = d.receipt().unwrap();
    assert_eq!(r.confirmations.len(), 3);
    let mut lowest: Vec<u32> = subnet.clone();
    lowest.sort();
    assert_eq!(r.confirmations.iter().map(|c| c.index).collect::<Vec<_>>(), lowest[..3]);
    assert_eq!(verify_receipt(&r, 4, 3, |a| net.key_of(a)), Ok(()));
}

#[test]
fn bad_acks_are_ignored() {
    let net = net(8);
    let digest = hash(b"blob");
    let subnet: Vec<u32> = vec![0, 1, 2, 3];
    let mut d = Dissemination::new(digest, subnet, 2, 100);
    // outside the subnet
    assert!(!d.on_ack(sign_ack(&net.keys[5], 5, net.addrs[5], &digest), &net.keys[5].public()));
    // signature over another blob
    assert!(!d.on_ack(sign_ack(&net.keys[1], 1, net.addrs[1], &hash(b"other")), &net.keys[1].public()));
    assert!(d.on_ack(sign_ack(&net.keys[1], 1, net.addrs[1], &digest), &net.keys[1].public()));
    // duplicate
    assert!(!d.on_ack(sign_ack(&net.keys[1], 1, net.addrs[1], &digest), &net.keys[1].public()));
    assert_eq!(d.ack_count(), 1);
}

#[test]
fn forged_receipts_fail_verification() {
    let net = net(6);
    let digest = hash(b"blob");
    let subnet = vec![0u32, 2, 4];
    let ack = |i: usize| sign_ack(&net.keys[i], i as u32, net.addrs[i], &digest);
    let mut d = Dissemination::new(digest, subnet.clone(), 2, 10);
    for i in [0usize, 2] {
        d.on_ack(ack(i), &net.keys[i].public());
    }
    let good = d.receipt().unwrap();
    let check = |r| verify_receipt(r, 3, 2, |a| net.key_of(a));

    let mut dup = good.clone();
    dup.confirmations[1] = dup.confirmations[0].clone();
    assert!(check(&dup).is_err());

    let mut outsider = good.clone();
    outsider.confirmations[1] = ack(1);
    assert!(check(&outsider).is_err());

    let mut short = good.clone();
    short.confirmations.pop();
    assert_eq!(check(&short), Err(StorageError::InsufficientConfirmations { got: 1, needed: 2 }));

    let mut retarget = good.clone();
    retarget.digest = hash(b"substituted");
    assert!(check(&retarget).is_err());

    let mut resized = good;
    resized.subnet.push(5);
    assert!(check(&resized).is_err());
}

#[test]
fn store_is_content_addressed_and_write_once() {
    let mut s = BlobStore::default();
    let b = StorageBlob::new(BlobKind::State, b"ciphertext".to_vec());
    assert_eq!(b.digest, hash(b"ciphertext"));
    assert!(s.put(b.clone()));
    assert!(s.put(b.clone()));
    let mut bad = StorageBlob::new(BlobKind::State, b"x".to_vec());
    bad.ciphertext = b"y".to_vec();
    assert!(!bad.is_intact());
    assert!(!s.put(bad));
    assert_eq!(s.get(&b.digest), Some(&b));
    assert!(s.get(&Digest::default()).is_none());
    assert_eq!(s.len(), 1);
}
