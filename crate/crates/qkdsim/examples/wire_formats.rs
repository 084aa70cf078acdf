//! Builds one protected frame and one ADDKEY message by hand and prints
//! annotated hexdumps of both, plus the capture-file header, as a map
//! of everything this simulator puts on the wire.
//!
//!     cargo run --example wire_formats

use qkdsim::capture::Recorder;
use qkdsim::charging::AddKeyMessage;
use qkdsim::crypto::{AlgSelection, AppPacket, AuthenticationAlg, EncryptionAlg, QkdHeader};
use qkdsim::engine::SimTime;
use qkdsim::keybuffer::BufferParams;
use qkdsim::manager::{ClassicalChannel, LinkId, LinkState};

fn hexdump(bytes: &[u8], limit: usize) {
    for (i, chunk) in bytes.chunks(16).enumerate().take(limit / 16) {
        let hex: Vec<String> = chunk.iter().map(|b| format!("{b:02x}")).collect();
        println!("  {:04x}  {}", i * 16, hex.join(" "));
    }
    if bytes.len() > limit {
        println!("  .... ({} more bytes)", bytes.len() - limit);
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let params = BufferParams {
        min_bytes: 0,
        max_bytes: 10_000,
        threshold_bytes: 5_000,
        initial_bytes: 0,
    };
    let mut link = LinkState::new(
        LinkId(0),
        ClassicalChannel { delay: SimTime::from_millis(1), drop_probability: 0.0 },
        AlgSelection {
            encryption: EncryptionAlg::Otp,
            authentication: AuthenticationAlg::Mac256,
        },
        [0, 1],
        params,
    );
    let mut recorder = Recorder::new();

    // Both ends hold the same material, as after a clean charging phase.
    let mut entropy = qkdsim::entropy::EntropySource::deterministic(1);
    let material = entropy.generate_stream(2_048)?;
    link.buffer_mut(0).add_key_material(&material);
    link.buffer_mut(1).add_key_material(&material);

    let packet = AppPacket {
        src_addr: [10, 0, 0, 1],
        dst_addr: [10, 0, 0, 2],
        src_port: 5000,
        dst_port: 5001,
        packet_id: 0,
        payload: b"sixteen byte msg".to_vec(),
    };
    let plaintext = packet.serialize();
    println!("application packet: {}-byte payload, {}-byte plaintext", 16, plaintext.len());
    println!("  transport header: src 10.0.0.1:5000 dst 10.0.0.2:5001 id 0");
    println!();

    let frame = link.send_packet(SimTime::ZERO, 0, &packet, &mut recorder)?;
    let header = QkdHeader::parse(&frame)?;
    println!(
        "protected frame: {} bytes = 72 header + {} ciphertext",
        frame.len(),
        frame.len() - 72
    );
    println!("   0..4   magic        \"QKD1\"");
    println!("   4..8   total_len    {}", header.total_len);
    println!("   8..12  message_id   {}", header.message_id);
    println!("  12..14  enc_alg      {} (otp)", header.enc_alg.wire_id());
    println!("  14..16  auth_alg     {} (mac256)", header.auth_alg.wire_id());
    println!("  16..24  enc_key_id   {}", header.enc_key_id);
    println!("  24..32  auth_key_id  {}", header.auth_key_id);
    println!("  32..40  reserved     zeros");
    println!("  40..72  auth_tag     hmac-sha-256 over header(tag=0) || ciphertext");
    hexdump(&frame, 96);
    println!();

    let addkey = AddKeyMessage { payload: material[..500].to_vec() };
    let wire = addkey.encode();
    println!("key-sync message: {} bytes = 6 magic + 4 length + 500 payload", wire.len());
    println!("   0..6   magic        \"ADDKEY\"");
    println!("   6..10  payload_len  500");
    hexdump(&wire, 32);
    println!();

    // An empty capture is just the 24-byte global header.
    let pcap = Recorder::new().render_pcap();
    println!("capture file header ({} bytes, all fields big-endian):", pcap.len());
    println!("  magic a1b2c3d4, version 2.4, snaplen 65535, linktype 147 (user-defined)");
    hexdump(&pcap, 32);
    Ok(())
}
