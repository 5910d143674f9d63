#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "marl/nn.hpp"
#include "marl/replay.hpp"
#include "marl/vtrace.hpp"

namespace marl::wire {

struct ProtocolError : std::runtime_error {
  explicit ProtocolError(const std::string& what) : std::runtime_error(what) {}
};

// Every frame on the wire is: magic byte 0x7B, u8 message type, u32
// big-endian payload length, payload bytes. Payload scalars are
// little-endian.
constexpr uint8_t kMagic = 0x7B;
constexpr size_t kHeaderSize = 6;
constexpr uint32_t kMaxPayload = 64u * 1024u * 1024u;

enum class MsgType : uint8_t {
  kWrite = 1,
  kSampleReq = 2,
  kSampleResp = 3,
  kStatsReq = 4,
  kStatsResp = 5,
  kError = 6,
  kInferReq = 7,
  kInferResp = 8,
  kGetParamsReq = 9,
  kParamsResp = 10,
};

enum class ErrorCode : uint16_t {
  kBadItem = 1,
  kClosed = 2,
  kProtocol = 3,
  kBadRequest = 4,
};

// A service-reported error frame, rethrown client-side.
struct RemoteError : std::runtime_error {
  RemoteError(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code(code) {}
  ErrorCode code;
};

class Writer {
 public:
  void put_u8(uint8_t v) { bytes_.push_back(v); }
  void put_u16(uint16_t v);
  void put_u32(uint32_t v);
  void put_u64(uint64_t v);
  void put_f32(float v);
  void put_bytes(const uint8_t* data, size_t len);
  std::vector<uint8_t> take() { return std::move(bytes_); }
  const std::vector<uint8_t>& bytes() const { return bytes_; }

 private:
  std::vector<uint8_t> bytes_;
};

class Reader {
 public:
  Reader(const uint8_t* data, size_t len) : data_(data), len_(len) {}
  explicit Reader(const std::vector<uint8_t>& buf)
      : Reader(buf.data(), buf.size()) {}

  uint8_t get_u8();
  uint16_t get_u16();
  uint32_t get_u32();
  uint64_t get_u64();
  float get_f32();
  size_t remaining() const { return len_ - pos_; }
  // Throws ProtocolError unless every byte has been consumed.
  void expect_end() const;

 private:
  void need(size_t n) const;
  const uint8_t* data_;
  size_t len_;
  size_t pos_ = 0;
};

struct FrameHeader {
  MsgType type;
  uint32_t payload_len;
};

// Header + payload ready to send.
std::vector<uint8_t> pack_frame(MsgType type,
                                const std::vector<uint8_t>& payload);
// Parses the fixed 6-byte header; throws ProtocolError on a bad magic byte,
// unknown type, or oversized length.
FrameHeader parse_header(const uint8_t header[kHeaderSize]);

// Trajectory payloads: u32 agent_id, u32 T, u32 obs_dim, u32 num_actions,
// then observations, actions, rewards, discounts, behavior log-probs and the
// bootstrap observation, in that order.
void encode_item(Writer& w, const vtrace::TrajectoryBatch& item);
vtrace::TrajectoryBatch decode_item(Reader& r);
std::vector<uint8_t> encode_items(
    const std::vector<vtrace::TrajectoryBatch>& items);
// Decodes items until the payload is exhausted.
std::vector<vtrace::TrajectoryBatch> decode_items(
    const std::vector<uint8_t>& payload);

// Stats payload: items_written, items_sampled, items_dropped, current_size
// as four u64 values.
std::vector<uint8_t> encode_stats(const replay::BufferStats& stats);
replay::BufferStats decode_stats(const std::vector<uint8_t>& payload);

// Error payload: u16 code + utf8 message.
std::vector<uint8_t> encode_error(ErrorCode code, const std::string& message);
std::pair<ErrorCode, std::string> decode_error(
    const std::vector<uint8_t>& payload);

// Inference request: u32 request_id, u32 agent_id, observation array.
struct InferRequest {
  uint32_t request_id = 0;
  uint32_t agent_id = 0;
  std::vector<float> observation;
};
std::vector<uint8_t> encode_infer_request(const InferRequest& req);
InferRequest decode_infer_request(const std::vector<uint8_t>& payload);

// Inference response: u32 request_id, u32 action, f32 log_prob, f32 value,
// u64 param_version.
struct InferResponse {
  uint32_t request_id = 0;
  uint32_t action = 0;
  float log_prob = 0.0f;
  float value = 0.0f;
  uint64_t param_version = 0;
};
std::vector<uint8_t> encode_infer_response(const InferResponse& resp);
InferResponse decode_infer_response(const std::vector<uint8_t>& payload);

// Parameter fetch: request carries the agent id; the response is the version
// followed by one agent's tensors in checkpoint order (w1, b1, w_pi, b_pi,
// w_v, b_v as little-endian f32).
std::vector<uint8_t> encode_get_params_request(uint32_t agent_id);
uint32_t decode_get_params_request(const std::vector<uint8_t>& payload);
std::vector<uint8_t> encode_params_response(const nn::Params& params);
// Tensor sizes are not self-describing, so decoding needs the expected shape.
nn::Params decode_params_response(const std::vector<uint8_t>& payload,
                                  const nn::NetSpec& spec);

}  // namespace marl::wire
