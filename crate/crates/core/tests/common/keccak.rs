//! Stand-alone Keccak-256 (original padding, as used by Ethereum).
//!
//! Round constants and rotation offsets are generated from their defining
//! LFSR and triangular-number recurrences rather than copied from a table.

const RATE: usize = 136;

pub fn round_constants() -> [u64; 24] {
    let mut lfsr: u8 = 0x01;
    let mut step = || {
        let bit = lfsr & 0x01 != 0;
        lfsr = if lfsr & 0x80 != 0 { (lfsr << 1) ^ 0x71 } else { lfsr << 1 };
        bit
    };
    let mut out = [0u64; 24];
    for rc in out.iter_mut() {
        for j in 0..7 {
            if step() {
                *rc ^= 1u64 << ((1u32 << j) - 1);
            }
        }
    }
    out
}

pub fn rotation_offsets() -> [[u32; 5]; 5] {
    let mut r = [[0u32; 5]; 5];
    let (mut x, mut y) = (1usize, 0usize);
    for t in 0..24u32 {
        r[x][y] = ((t + 1) * (t + 2) / 2) % 64;
        let next = (y, (2 * x + 3 * y) % 5);
        x = next.0;
        y = next.1;
    }
    r
}

fn permute(a: &mut [u64; 25], rc: &[u64; 24], rot: &[[u32; 5]; 5]) {
    for &constant in rc {
        let mut c = [0u64; 5];
        for x in 0..5 {
            c[x] = a[x] ^ a[x + 5] ^ a[x + 10] ^ a[x + 15] ^ a[x + 20];
        }
        for x in 0..5 {
            let d = c[(x + 4) % 5] ^ c[(x + 1) % 5].rotate_left(1);
            for y in 0..5 {
                a[x + 5 * y] ^= d;
            }
        }
        let mut b = [0u64; 25];
        for x in 0..5 {
            for y in 0..5 {
                b[y + 5 * ((2 * x + 3 * y) % 5)] = a[x + 5 * y].rotate_left(rot[x][y]);
            }
        }
        for x in 0..5 {
            for y in 0..5 {
                a[x + 5 * y] = b[x + 5 * y] ^ (!b[(x + 1) % 5 + 5 * y] & b[(x + 2) % 5 + 5 * y]);
            }
        }
        a[0] ^= constant;
    }
}

pub fn keccak256(message: &[u8]) -> [u8; 32] {
    let rc = round_constants();
    let rot = rotation_offsets();
    let mut padded = message.to_vec();
    padded.push(0x01);
    while !padded.len().is_multiple_of(RATE) {
        padded.push(0x00);
    }
    *padded.last_mut().unwrap() |= 0x80;

    let mut state = [0u64; 25];
    for block in padded.chunks(RATE) {
        for (i, lane) in block.chunks(8).enumerate() {
            state[i] ^= u64::from_le_bytes(lane.try_into().unwrap());
        }
        permute(&mut state, &rc, &rot);
    }
    let mut out = [0u8; 32];
    for (i, chunk) in out.chunks_mut(8).enumerate() {
        chunk.copy_from_slice(&state[i].to_le_bytes());
    }
    out
}
