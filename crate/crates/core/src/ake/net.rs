//! TCP transport: one session per connection, one thread per connection.

use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::path::PathBuf;
use std::sync::Arc;
use std::thread;

use rand::rngs::OsRng;

use super::sigma::{msg1_init, msg2_respond, Authorized};
use super::wire::Frame;
use super::{AkeError, LogQuery, LogResponse, RawChunk, Role, VerifierRegistry};
use crate::crypto::{KeyPair, PublicKey};
use crate::model::{SealMode, StreamTag};
use crate::sealing::{bucket_index, bucket_prefix};
use crate::store::{ChunkStore, Query};
use crate::verify::UserChunkView;

pub struct ServerContext {
    pub store_root: PathBuf,
    pub registry: VerifierRegistry,
    pub sp_id: Vec<u8>,
    pub sp_key: KeyPair,
}

/// Builds the response to an authorized query from the store.
pub fn answer_query(store: &ChunkStore, role: &Role, query: &LogQuery) -> Result<LogResponse, AkeError> {
    let serr = |e: crate::store::StoreError| AkeError::Store(e.to_string());
    match (role, query) {
        (Role::Auditor, LogQuery::Chunks(q)) => {
            let retrieved = store.get_chunks(q).map_err(serr)?;
            let chunks = retrieved
                .into_iter()
                .map(|r| {
                    Ok(RawChunk { bytes: store.read_raw(&r.id).map_err(serr)?, id: r.id, g_prev: r.g_prev, g_next: r.g_next })
                })
                .collect::<Result<_, AkeError>>()?;
            Ok(LogResponse::Chunks { streams: store.streams().cloned().collect(), chunks })
        }
        (_, LogQuery::UserRange { from, to }) => {
            let only: Option<StreamTag> = match role {
                Role::User(dev) => store
                    .streams()
                    .find(|s| s.mode == SealMode::PerUser)
                    .map(|s| StreamTag::bucket(bucket_prefix(SealMode::PerUser), bucket_index(dev.as_bytes(), s.bucket_count))),
                Role::Auditor => None,
            };
            let keep = |tag: &Option<StreamTag>| only.is_none() || *tag == only;
            let views = store
                .get_chunks(&Query::TimeRange { from: *from, to: *to })
                .map_err(serr)?
                .iter()
                .filter(|r| keep(&r.id.stream))
                .filter_map(|r| UserChunkView::from_retrieved(r).ok())
                .collect();
            let streams = store.streams().filter(|s| keep(&s.tag)).cloned().collect();
            Ok(LogResponse::User { streams, views })
        }
        (Role::User(_), LogQuery::Chunks(_)) => Err(AkeError::Unauthorized("users may only request user digests")),
    }
}

/// Runs the responder side of one session. On any failure an error frame
/// is sent and no log bytes leave the server.
pub fn handle_connection<S: Read + Write>(stream: &mut S, ctx: &ServerContext) -> Result<Authorized, AkeError> {
    let mut rng = OsRng;
    let m1 = Frame::read_from(stream)?.encode();
    let (mut responder, m2) = match msg2_respond(&ctx.registry, &ctx.sp_id, &ctx.sp_key, &m1, &mut rng) {
        Ok(x) => x,
        Err(e) => {
            let _ = Frame::error("bad msg1").write_to(stream);
            return Err(e);
        }
    };
    stream.write_all(&m2)?;
    stream.flush()?;
    let m3 = Frame::read_from(stream)?.encode();
    let auth = match responder.handle_msg3(&m3) {
        Ok(a) => a,
        Err(e) => {
            let reason = match e {
                AkeError::UnknownVerifier | AkeError::Unauthorized(_) => "not authorized",
                _ => "authentication failed",
            };
            let _ = Frame::error(reason).write_to(stream);
            return Err(e);
        }
    };
    let resp = ChunkStore::open(&ctx.store_root)
        .map_err(|e| AkeError::Store(e.to_string()))
        .and_then(|store| answer_query(&store, &auth.role, &auth.query));
    match resp {
        Ok(resp) => {
            let frame = responder.seal_response(&resp, &mut rng)?;
            stream.write_all(&frame)?;
            stream.flush()?;
            Ok(auth)
        }
        Err(e) => {
            let _ = Frame::error("query failed").write_to(stream);
            Err(e)
        }
    }
}

/// Accepts connections until `limit` sessions have been handled (forever
/// when `None`). Each session runs on its own thread.
pub fn serve(listener: TcpListener, ctx: Arc<ServerContext>, limit: Option<usize>) -> std::io::Result<()> {
    let mut handles = Vec::new();
    for (n, conn) in listener.incoming().enumerate() {
        let mut conn = conn?;
        let ctx = Arc::clone(&ctx);
        handles.push(thread::spawn(move || {
            let peer = conn.peer_addr().ok();
            if let Err(e) = handle_connection(&mut conn, &ctx) {
                eprintln!("session from {peer:?} aborted: {e}");
            }
        }));
        if limit.is_some_and(|l| n + 1 >= l) {
            break;
        }
    }
    for h in handles {
        let _ = h.join();
    }
    Ok(())
}

/// Runs the initiator side over any byte stream.
pub fn run_initiator<S: Read + Write>(
    stream: &mut S,
    sp_key: &PublicKey,
    v_id: &[u8],
    identity: &KeyPair,
    query: &LogQuery,
) -> Result<LogResponse, AkeError> {
    let mut rng = OsRng;
    let (mut init, m1) = msg1_init(*sp_key, &mut rng);
    stream.write_all(&m1)?;
    stream.flush()?;
    let m2 = Frame::read_from(stream)?.encode();
    init.handle_msg2(&m2)?;
    let m3 = init.msg3_finish(v_id, identity, query, &mut rng)?;
    stream.write_all(&m3)?;
    stream.flush()?;
    let resp = Frame::read_from(stream)?.encode();
    init.open_response(&resp)
}

pub fn fetch(
    addr: impl ToSocketAddrs,
    sp_key: &PublicKey,
    v_id: &[u8],
    identity: &KeyPair,
    query: &LogQuery,
) -> Result<LogResponse, AkeError> {
    let mut stream = TcpStream::connect(addr)?;
    run_initiator(&mut stream, sp_key, v_id, identity, query)
}
