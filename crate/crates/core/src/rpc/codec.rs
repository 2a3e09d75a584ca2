//! Length-prefixed binary framing.
//!
//! ```text
//! frame    = len:u32be payload
//! request  = 0x00 id:u64be str(method) str(name) str(key) str(value)
//! response = 0x01 id:u64be status:u8 str(value)
//! str      = len:u16be bytes
//! ```
//!
//! A request's fencing epoch travels in the name field as `<lease name>@<epoch>`.

use std::io::{self, Read, Write};

use crate::lockservice::LeaseName;

pub const KIND_REQUEST: u8 = 0;
pub const KIND_RESPONSE: u8 = 1;
pub const MAX_FIELD_LEN: usize = u16::MAX as usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Status {
    Ok = 0,
    AppError = 1,
    NotOwner = 2,
}

impl Status {
    pub fn from_u8(b: u8) -> Option<Status> {
        match b {
            0 => Some(Status::Ok),
            1 => Some(Status::AppError),
            2 => Some(Status::NotOwner),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Status::Ok => "ok",
            Status::AppError => "app-error",
            Status::NotOwner => "not-owner",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Request {
    pub id: u64,
    pub method: String,
    pub name: Option<LeaseName>,
    /// Client's fencing token; only meaningful with a name.
    pub fence: Option<u64>,
    pub key: Vec<u8>,
    pub value: Vec<u8>,
}

impl Request {
    pub fn new(id: u64, method: impl Into<String>) -> Self {
        Self {
            id,
            method: method.into(),
            name: None,
            fence: None,
            key: Vec::new(),
            value: Vec::new(),
        }
    }

    pub fn with_name(mut self, name: LeaseName) -> Self {
        self.name = Some(name);
        self
    }

    pub fn with_fence(mut self, epoch: u64) -> Self {
        self.fence = Some(epoch);
        self
    }

    pub fn with_key(mut self, key: impl Into<Vec<u8>>) -> Self {
        self.key = key.into();
        self
    }

    pub fn with_value(mut self, value: impl Into<Vec<u8>>) -> Self {
        self.value = value.into();
        self
    }

    pub fn encode(&self) -> Result<Vec<u8>, CodecError> {
        encode_frame(&Message::Request(self.clone()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Response {
    pub id: u64,
    pub status: Status,
    pub value: Vec<u8>,
}

impl Response {
    pub fn ok(id: u64, value: impl Into<Vec<u8>>) -> Self {
        Self {
            id,
            status: Status::Ok,
            value: value.into(),
        }
    }

    pub fn app_error(id: u64, message: impl Into<Vec<u8>>) -> Self {
        Self {
            id,
            status: Status::AppError,
            value: message.into(),
        }
    }

    pub fn not_owner(id: u64) -> Self {
        Self {
            id,
            status: Status::NotOwner,
            value: b"not-owner".to_vec(),
        }
    }

    pub fn encode(&self) -> Result<Vec<u8>, CodecError> {
        encode_frame(&Message::Response(self.clone()))
    }

    pub fn value_str(&self) -> String {
        String::from_utf8_lossy(&self.value).into_owned()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Message {
    Request(Request),
    Response(Response),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CodecError {
    #[error("malformed-frame: {0}")]
    Malformed(&'static str),
    #[error("field `{field}` is {len} bytes, limit {MAX_FIELD_LEN}")]
    FieldTooLong { field: &'static str, len: usize },
    #[error("request carries a fencing epoch without a lease name")]
    FenceWithoutName,
}

fn put_str(out: &mut Vec<u8>, field: &'static str, bytes: &[u8]) -> Result<(), CodecError> {
    if bytes.len() > MAX_FIELD_LEN {
        return Err(CodecError::FieldTooLong {
            field,
            len: bytes.len(),
        });
    }
    out.extend_from_slice(&(bytes.len() as u16).to_be_bytes());
    out.extend_from_slice(bytes);
    Ok(())
}

fn name_field(req: &Request) -> Result<Vec<u8>, CodecError> {
    match (&req.name, req.fence) {
        (None, None) => Ok(Vec::new()),
        (None, Some(_)) => Err(CodecError::FenceWithoutName),
        (Some(n), None) => Ok(n.as_str().as_bytes().to_vec()),
        (Some(n), Some(epoch)) => Ok(format!("{n}@{epoch}").into_bytes()),
    }
}

/// Serializes the payload without the outer length prefix.
pub fn encode_payload(msg: &Message) -> Result<Vec<u8>, CodecError> {
    let mut out = Vec::with_capacity(64);
    match msg {
        Message::Request(req) => {
            out.push(KIND_REQUEST);
            out.extend_from_slice(&req.id.to_be_bytes());
            put_str(&mut out, "method", req.method.as_bytes())?;
            put_str(&mut out, "name", &name_field(req)?)?;
            put_str(&mut out, "key", &req.key)?;
            put_str(&mut out, "value", &req.value)?;
        }
        Message::Response(resp) => {
            out.push(KIND_RESPONSE);
            out.extend_from_slice(&resp.id.to_be_bytes());
            out.push(resp.status as u8);
            put_str(&mut out, "value", &resp.value)?;
        }
    }
    Ok(out)
}

pub fn encode_frame(msg: &Message) -> Result<Vec<u8>, CodecError> {
    let payload = encode_payload(msg)?;
    let mut frame = Vec::with_capacity(4 + payload.len());
    frame.extend_from_slice(&(payload.len() as u32).to_be_bytes());
    frame.extend_from_slice(&payload);
    Ok(frame)
}

struct Cursor<'a> {
    buf: &'a [u8],
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CodecError> {
        if self.buf.len() < n {
            return Err(CodecError::Malformed("truncated"));
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    fn u8(&mut self) -> Result<u8, CodecError> {
        Ok(self.take(1)?[0])
    }

    fn u64(&mut self) -> Result<u64, CodecError> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn str(&mut self) -> Result<&'a [u8], CodecError> {
        let len = u16::from_be_bytes(self.take(2)?.try_into().expect("2 bytes"));
        self.take(len as usize)
    }
}

fn parse_name_field(bytes: &[u8]) -> Result<(Option<LeaseName>, Option<u64>), CodecError> {
    if bytes.is_empty() {
        return Ok((None, None));
    }
    let text = std::str::from_utf8(bytes).map_err(|_| CodecError::Malformed("name is not utf-8"))?;
    let (path, fence) = match text.split_once('@') {
        None => (text, None),
        Some((path, digits)) => {
            let canonical = !digits.is_empty()
                && digits.bytes().all(|b| b.is_ascii_digit())
                && (digits == "0" || !digits.starts_with('0'));
            if !canonical {
                return Err(CodecError::Malformed("bad fencing epoch"));
            }
            let epoch = digits
                .parse()
                .map_err(|_| CodecError::Malformed("bad fencing epoch"))?;
            (path, Some(epoch))
        }
    };
    let name = LeaseName::new(path).map_err(|_| CodecError::Malformed("bad lease name"))?;
    Ok((Some(name), fence))
}

pub fn decode_payload(payload: &[u8]) -> Result<Message, CodecError> {
    let mut cur = Cursor { buf: payload };
    let msg = match cur.u8()? {
        KIND_REQUEST => {
            let id = cur.u64()?;
            let method = std::str::from_utf8(cur.str()?)
                .map_err(|_| CodecError::Malformed("method is not utf-8"))?
                .to_string();
            if method.is_empty() {
                return Err(CodecError::Malformed("empty method"));
            }
            let (name, fence) = parse_name_field(cur.str()?)?;
            let key = cur.str()?.to_vec();
            let value = cur.str()?.to_vec();
            Message::Request(Request {
                id,
                method,
                name,
                fence,
                key,
                value,
            })
        }
        KIND_RESPONSE => {
            let id = cur.u64()?;
            let status = Status::from_u8(cur.u8()?).ok_or(CodecError::Malformed("bad status"))?;
            let value = cur.str()?.to_vec();
            Message::Response(Response { id, status, value })
        }
        _ => return Err(CodecError::Malformed("bad kind")),
    };
    if !cur.buf.is_empty() {
        return Err(CodecError::Malformed("trailing bytes"));
    }
    Ok(msg)
}

pub fn decode_frame(frame: &[u8]) -> Result<Message, CodecError> {
    if frame.len() < 4 {
        return Err(CodecError::Malformed("truncated"));
    }
    let (len, payload) = frame.split_at(4);
    let len = u32::from_be_bytes(len.try_into().expect("4 bytes")) as usize;
    match payload.len().cmp(&len) {
        std::cmp::Ordering::Less => Err(CodecError::Malformed("truncated")),
        std::cmp::Ordering::Greater => Err(CodecError::Malformed("trailing bytes")),
        std::cmp::Ordering::Equal => decode_payload(payload),
    }
}

pub fn decode_request(frame: &[u8]) -> Result<Request, CodecError> {
    match decode_frame(frame)? {
        Message::Request(r) => Ok(r),
        Message::Response(_) => Err(CodecError::Malformed("expected request")),
    }
}

pub fn decode_response(frame: &[u8]) -> Result<Response, CodecError> {
    match decode_frame(frame)? {
        Message::Response(r) => Ok(r),
        Message::Request(_) => Err(CodecError::Malformed("expected response")),
    }
}

/// Largest payload `read_frame` accepts: one request with every field at the limit.
const MAX_PAYLOAD: usize = 1 + 8 + 4 * (2 + MAX_FIELD_LEN);

/// Reads one whole frame (header included) from a byte stream.
pub fn read_frame(reader: &mut impl Read) -> io::Result<Vec<u8>> {
    let mut header = [0u8; 4];
    reader.read_exact(&mut header)?;
    let len = u32::from_be_bytes(header) as usize;
    if len > MAX_PAYLOAD {
        return Err(io::Error::new(io::ErrorKind::InvalidData, "frame too large"));
    }
    let mut frame = Vec::with_capacity(4 + len);
    frame.extend_from_slice(&header);
    frame.resize(4 + len, 0);
    reader.read_exact(&mut frame[4..])?;
    Ok(frame)
}

pub fn write_frame(writer: &mut impl Write, frame: &[u8]) -> io::Result<()> {
    writer.write_all(frame)?;
    writer.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Independent byte count of a request payload straight from the layout.
    fn request_payload_len(method: &str, name: &str, key: &[u8], value: &[u8]) -> usize {
        let kind = 1;
        let id = 8;
        let strs = [method.len(), name.len(), key.len(), value.len()]
            .iter()
            .map(|l| 2 + l)
            .sum::<usize>();
        kind + id + strs
    }

    #[test]
    fn put_request_layout() {
        let req = Request::new(1, "put").with_key("k").with_value("v");
        let frame = req.encode().unwrap();
        let expected_len = request_payload_len("put", "", b"k", b"v");
        assert_eq!(expected_len, 22);
        assert_eq!(frame.len(), 4 + expected_len);
        assert_eq!(&frame[..4], &(expected_len as u32).to_be_bytes());
        let mut want = vec![0u8];
        want.extend_from_slice(&1u64.to_be_bytes());
        want.extend_from_slice(&[0, 3, b'p', b'u', b't']);
        want.extend_from_slice(&[0, 0]);
        want.extend_from_slice(&[0, 1, b'k']);
        want.extend_from_slice(&[0, 1, b'v']);
        assert_eq!(&frame[4..], want.as_slice());
    }

    #[test]
    fn response_layout() {
        let frame = Response::app_error(7, "no").encode().unwrap();
        assert_eq!(
            frame,
            vec![0, 0, 0, 14, 1, 0, 0, 0, 0, 0, 0, 0, 7, 1, 0, 2, b'n', b'o']
        );
    }

    #[test]
    fn fence_rides_in_name_field() {
        let req = Request::new(2, "kv.put")
            .with_name("tablets/T0".parse().unwrap())
            .with_fence(3);
        let frame = req.encode().unwrap();
        let text = String::from_utf8_lossy(&frame);
        assert!(text.contains("tablets/T0@3"));
        assert_eq!(decode_request(&frame).unwrap(), req);
    }

    #[test]
    fn truncation_is_malformed() {
        let frame = Request::new(1, "put").with_key("k").encode().unwrap();
        let cut = &frame[..frame.len() - 1];
        assert!(matches!(decode_frame(cut), Err(CodecError::Malformed(_))));
    }

    #[test]
    fn trailing_bytes_and_bad_kind_are_malformed() {
        let mut frame = Response::ok(1, "x").encode().unwrap();
        frame.push(0);
        assert_eq!(decode_frame(&frame), Err(CodecError::Malformed("trailing bytes")));

        // Header agrees with payload, but payload has an extra byte.
        let mut payload = encode_payload(&Message::Response(Response::ok(1, "x"))).unwrap();
        payload.push(9);
        assert_eq!(decode_payload(&payload), Err(CodecError::Malformed("trailing bytes")));

        let mut frame = Response::ok(1, "x").encode().unwrap();
        frame[4] = 7;
        assert_eq!(decode_frame(&frame), Err(CodecError::Malformed("bad kind")));
    }

    #[test]
    fn bad_status_and_names_are_malformed() {
        let mut frame = Response::ok(1, "").encode().unwrap();
        frame[13] = 3;
        assert_eq!(decode_frame(&frame), Err(CodecError::Malformed("bad status")));

        for name in ["a//b", "t@", "t@01", "t@x", "@4"] {
            let mut payload = vec![0];
            payload.extend_from_slice(&1u64.to_be_bytes());
            put_str(&mut payload, "method", b"m").unwrap();
            put_str(&mut payload, "name", name.as_bytes()).unwrap();
            put_str(&mut payload, "key", b"").unwrap();
            put_str(&mut payload, "value", b"").unwrap();
            assert!(decode_payload(&payload).is_err(), "{name} accepted");
        }
    }

    #[test]
    fn oversize_fields_are_rejected() {
        let req = Request::new(1, "put").with_value(vec![0u8; MAX_FIELD_LEN + 1]);
        assert!(matches!(req.encode(), Err(CodecError::FieldTooLong { field: "value", .. })));
        let ok = Request::new(1, "put").with_value(vec![0u8; MAX_FIELD_LEN]);
        assert_eq!(decode_request(&ok.encode().unwrap()).unwrap(), ok);
    }

    #[test]
    fn fence_without_name_cannot_encode() {
        let req = Request::new(1, "put").with_fence(1);
        assert_eq!(req.encode(), Err(CodecError::FenceWithoutName));
    }

    #[test]
    fn stream_read_write() {
        let a = Request::new(1, "a").encode().unwrap();
        let b = Response::ok(1, "b").encode().unwrap();
        let mut buf = Vec::new();
        write_frame(&mut buf, &a).unwrap();
        write_frame(&mut buf, &b).unwrap();
        let mut rd = buf.as_slice();
        assert_eq!(read_frame(&mut rd).unwrap(), a);
        assert_eq!(read_frame(&mut rd).unwrap(), b);
        assert!(read_frame(&mut rd).is_err());
    }

    fn arb_name() -> impl Strategy<Value = Option<LeaseName>> {
        prop::option::of(
            prop::collection::vec("[a-zA-Z0-9_.-]{1,6}", 1..4)
                .prop_map(|segs| LeaseName::new(segs.join("/")).unwrap()),
        )
    }

    fn arb_message() -> impl Strategy<Value = Message> {
        let bytes = || prop::collection::vec(any::<u8>(), 0..24);
        let req = (any::<u64>(), "[a-z.]{1,10}", arb_name(), any::<Option<u64>>(), bytes(), bytes()).prop_map(
            |(id, method, name, fence, key, value)| {
                let fence = name.as_ref().and(fence);
                Message::Request(Request {
                    id,
                    method,
                    name,
                    fence,
                    key,
                    value,
                })
            },
        );
        let resp = (any::<u64>(), 0u8..3, bytes()).prop_map(|(id, s, value)| {
            Message::Response(Response {
                id,
                status: Status::from_u8(s).unwrap(),
                value,
            })
        });
        prop_oneof![req, resp]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]

        #[test]
        fn round_trip(msg in arb_message()) {
            let frame = encode_frame(&msg).unwrap();
            prop_assert_eq!(decode_frame(&frame).unwrap(), msg);
            for cut in 0..frame.len() {
                prop_assert!(matches!(decode_frame(&frame[..cut]), Err(CodecError::Malformed(_))));
            }
        }
    }
}
