//! Shared test support: an independent keccak256 oracle written from the
//! keccak-f[1600] reference permutation (rate 1088, original 0x01 domain
//! padding). Kept separate from the crate's hashing path on purpose so the
//! golden and Merkle tests cross-check two implementations.

#![allow(dead_code)]

const ROUND_CONSTANTS: [u64; 24] = [
    0x0000000000000001,
    0x0000000000008082,
    0x800000000000808A,
    0x8000000080008000,
    0x000000000000808B,
    0x0000000080000001,
    0x8000000080008081,
    0x8000000000008009,
    0x000000000000008A,
    0x0000000000000088,
    0x0000000080008009,
    0x000000008000000A,
    0x000000008000808B,
    0x800000000000008B,
    0x8000000000008089,
    0x8000000000008003,
    0x8000000000008002,
    0x8000000000000080,
    0x000000000000800A,
    0x800000008000000A,
    0x8000000080008081,
    0x8000000000008080,
    0x0000000080000001,
    0x8000000080008008,
];

const ROTATIONS: [[u32; 5]; 5] = [
    [0, 36, 3, 41, 18],
    [1, 44, 10, 45, 2],
    [62, 6, 43, 15, 61],
    [28, 55, 25, 21, 56],
    [27, 20, 39, 8, 14],
];

fn keccak_f(lanes: &mut [[u64; 5]; 5]) {
    for &rc in &ROUND_CONSTANTS {
        // theta
        let mut c = [0u64; 5];
        for x in 0..5 {
            c[x] = lanes[x][0] ^ lanes[x][1] ^ lanes[x][2] ^ lanes[x][3] ^ lanes[x][4];
        }
        let mut d = [0u64; 5];
        for x in 0..5 {
            d[x] = c[(x + 4) % 5] ^ c[(x + 1) % 5].rotate_left(1);
        }
        for x in 0..5 {
            for y in 0..5 {
                lanes[x][y] ^= d[x];
            }
        }
        // rho + pi
        let mut b = [[0u64; 5]; 5];
        for x in 0..5 {
            for y in 0..5 {
                b[y][(2 * x + 3 * y) % 5] = lanes[x][y].rotate_left(ROTATIONS[x][y]);
            }
        }
        // chi
        for x in 0..5 {
            for y in 0..5 {
                lanes[x][y] = b[x][y] ^ (!b[(x + 1) % 5][y] & b[(x + 2) % 5][y]);
            }
        }
        // iota
        lanes[0][0] ^= rc;
    }
}

/// Reference keccak256, independent of the crate's sha3-backed path.
pub fn reference_keccak256(data: &[u8]) -> [u8; 32] {
    const RATE: usize = 136;
    let mut lanes = [[0u64; 5]; 5];

    let mut padded = data.to_vec();
    padded.push(0x01);
    while !padded.len().is_multiple_of(RATE) {
        padded.push(0x00);
    }
    let last = padded.len() - 1;
    padded[last] |= 0x80;

    for block in padded.chunks(RATE) {
        for (i, lane_bytes) in block.chunks(8).enumerate() {
            let lane = u64::from_le_bytes(lane_bytes.try_into().unwrap());
            lanes[i % 5][i / 5] ^= lane;
        }
        keccak_f(&mut lanes);
    }

    let mut out = [0u8; 32];
    for i in 0..4 {
        out[i * 8..(i + 1) * 8].copy_from_slice(&lanes[i % 5][i / 5].to_le_bytes());
    }
    out
}

pub fn reference_keccak256_concat(parts: &[&[u8]]) -> [u8; 32] {
    let mut buf = Vec::new();
    for part in parts {
        buf.extend_from_slice(part);
    }
    reference_keccak256(&buf)
}

#[test]
fn reference_keccak_matches_public_vectors() {
    assert_eq!(
        hex::encode(reference_keccak256(b"")),
        "c5d2460186f7233c927e7db2dcc703c0e500b653ca82273b7bfad8045d85a470"
    );
    assert_eq!(
        hex::encode(reference_keccak256(b"hello")),
        "1c8aff950685c2ed4bc3174f3472287b56d9517b9c948127319a09a7a36deac8"
    );
    // multi-block input (> 136 bytes)
    let long = vec![0xabu8; 300];
    assert_eq!(
        reference_keccak256(&long),
        *gaslite_core::crypto::keccak256(&long).as_bytes()
    );
}
