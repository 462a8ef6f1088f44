//! Length-prefixed framing: 4-octet big-endian length, then the CBOR message.

use bytes::{Buf, BufMut, BytesMut};
use tokio_util::codec::{Decoder, Encoder};

use super::message::{Aap2Error, Message};

pub const DEFAULT_MAX_FRAME: u32 = 17 * 1024 * 1024;

pub fn frame(msg: &Message) -> Vec<u8> {
    let body = msg.encode();
    let mut out = Vec::with_capacity(body.len() + 4);
    out.extend_from_slice(&(body.len() as u32).to_be_bytes());
    out.extend_from_slice(&body);
    out
}

#[derive(Debug, Clone)]
pub struct Aap2Codec {
    max_frame: u32,
}

impl Aap2Codec {
    pub fn new(max_frame: u32) -> Self {
        Aap2Codec { max_frame }
    }
}

impl Default for Aap2Codec {
    fn default() -> Self {
        Aap2Codec::new(DEFAULT_MAX_FRAME)
    }
}

impl Decoder for Aap2Codec {
    type Item = Message;
    type Error = Aap2Error;

    fn decode(&mut self, src: &mut BytesMut) -> Result<Option<Message>, Aap2Error> {
        if src.len() < 4 {
            return Ok(None);
        }
        let len = u32::from_be_bytes(src[..4].try_into().unwrap());
        if len > self.max_frame {
            return Err(Aap2Error::FrameTooLarge {
                size: len as u64,
                max: self.max_frame as u64,
            });
        }
        let total = 4 + len as usize;
        if src.len() < total {
            src.reserve(total - src.len());
            return Ok(None);
        }
        src.advance(4);
        let body = src.split_to(len as usize);
        Message::decode(&body).map(Some)
    }
}

impl Encoder<Message> for Aap2Codec {
    type Error = Aap2Error;

    fn encode(&mut self, msg: Message, dst: &mut BytesMut) -> Result<(), Aap2Error> {
        let body = msg.encode();
        if body.len() as u64 > self.max_frame as u64 {
            return Err(Aap2Error::FrameTooLarge {
                size: body.len() as u64,
                max: self.max_frame as u64,
            });
        }
        dst.reserve(4 + body.len());
        dst.put_u32(body.len() as u32);
        dst.extend_from_slice(&body);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::super::message::{strategy, Response};
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn keepalive_frame() {
        assert_eq!(frame(&Message::Keepalive), vec![0, 0, 0, 3, 0x82, 0x06, 0xA0]);
    }

    #[test]
    fn partial_input_waits() {
        let mut codec = Aap2Codec::default();
        let mut buf = BytesMut::from(&[0u8, 0][..]);
        assert!(codec.decode(&mut buf).unwrap().is_none());
        buf.extend_from_slice(&[0, 3, 0x82, 0x06]);
        assert!(codec.decode(&mut buf).unwrap().is_none());
        buf.extend_from_slice(&[0xA0]);
        assert_eq!(codec.decode(&mut buf).unwrap(), Some(Message::Keepalive));
        assert!(buf.is_empty());
    }

    #[test]
    fn oversized_frame() {
        let mut codec = Aap2Codec::new(10);
        let mut buf = BytesMut::from(&[0u8, 0, 0, 11][..]);
        assert!(matches!(codec.decode(&mut buf), Err(Aap2Error::FrameTooLarge { size: 11, max: 10 })));
        let mut out = BytesMut::new();
        assert!(codec
            .encode(Message::Response(Response::error("a detail longer than ten")), &mut out)
            .is_err());
    }

    proptest! {
        #[test]
        fn frame_deframe_identity(msgs in proptest::collection::vec(strategy::message(), 1..5), cut in any::<prop::sample::Index>()) {
            let mut stream = Vec::new();
            for m in &msgs {
                stream.extend(frame(m));
            }
            let at = cut.index(stream.len() + 1);
            let mut codec = Aap2Codec::default();
            let mut buf = BytesMut::from(&stream[..at]);
            let mut got = Vec::new();
            while let Some(m) = codec.decode(&mut buf).unwrap() {
                got.push(m);
            }
            buf.extend_from_slice(&stream[at..]);
            while let Some(m) = codec.decode(&mut buf).unwrap() {
                got.push(m);
            }
            prop_assert_eq!(got, msgs);
        }
    }
}
