#include "marl/wire.hpp"

#include <cstring>

namespace marl::wire {

namespace {

bool known_type(uint8_t t) {
  return t >= static_cast<uint8_t>(MsgType::kWrite) &&
         t <= static_cast<uint8_t>(MsgType::kParamsResp);
}

}  // namespace

void Writer::put_u16(uint16_t v) {
  bytes_.push_back(static_cast<uint8_t>(v & 0xff));
  bytes_.push_back(static_cast<uint8_t>(v >> 8));
}

void Writer::put_u32(uint32_t v) {
  for (int i = 0; i < 4; ++i)
    bytes_.push_back(static_cast<uint8_t>((v >> (8 * i)) & 0xff));
}

void Writer::put_u64(uint64_t v) {
  for (int i = 0; i < 8; ++i)
    bytes_.push_back(static_cast<uint8_t>((v >> (8 * i)) & 0xff));
}

void Writer::put_f32(float v) {
  uint32_t bits;
  std::memcpy(&bits, &v, sizeof bits);
  put_u32(bits);
}

void Writer::put_bytes(const uint8_t* data, size_t len) {
  bytes_.insert(bytes_.end(), data, data + len);
}

void Reader::need(size_t n) const {
  if (pos_ + n > len_) throw ProtocolError("payload truncated");
}

uint8_t Reader::get_u8() {
  need(1);
  return data_[pos_++];
}

uint16_t Reader::get_u16() {
  need(2);
  uint16_t v = static_cast<uint16_t>(data_[pos_]) |
               static_cast<uint16_t>(data_[pos_ + 1]) << 8;
  pos_ += 2;
  return v;
}

uint32_t Reader::get_u32() {
  need(4);
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(data_[pos_ + i]) << (8 * i);
  pos_ += 4;
  return v;
}

uint64_t Reader::get_u64() {
  need(8);
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(data_[pos_ + i]) << (8 * i);
  pos_ += 8;
  return v;
}

float Reader::get_f32() {
  const uint32_t bits = get_u32();
  float v;
  std::memcpy(&v, &bits, sizeof v);
  return v;
}

void Reader::expect_end() const {
  if (pos_ != len_) throw ProtocolError("payload has trailing bytes");
}

std::vector<uint8_t> pack_frame(MsgType type,
                                const std::vector<uint8_t>& payload) {
  if (payload.size() > kMaxPayload) throw ProtocolError("payload too large");
  std::vector<uint8_t> frame;
  frame.reserve(kHeaderSize + payload.size());
  frame.push_back(kMagic);
  frame.push_back(static_cast<uint8_t>(type));
  const uint32_t len = static_cast<uint32_t>(payload.size());
  frame.push_back(static_cast<uint8_t>((len >> 24) & 0xff));
  frame.push_back(static_cast<uint8_t>((len >> 16) & 0xff));
  frame.push_back(static_cast<uint8_t>((len >> 8) & 0xff));
  frame.push_back(static_cast<uint8_t>(len & 0xff));
  frame.insert(frame.end(), payload.begin(), payload.end());
  return frame;
}

FrameHeader parse_header(const uint8_t header[kHeaderSize]) {
  if (header[0] != kMagic) throw ProtocolError("bad magic byte");
  if (!known_type(header[1])) throw ProtocolError("unknown message type");
  const uint32_t len = static_cast<uint32_t>(header[2]) << 24 |
                       static_cast<uint32_t>(header[3]) << 16 |
                       static_cast<uint32_t>(header[4]) << 8 |
                       static_cast<uint32_t>(header[5]);
  if (len > kMaxPayload) throw ProtocolError("payload length too large");
  return {static_cast<MsgType>(header[1]), len};
}

void encode_item(Writer& w, const vtrace::TrajectoryBatch& item) {
  const uint32_t steps = static_cast<uint32_t>(item.length());
  w.put_u32(item.agent_id);
  w.put_u32(steps);
  w.put_u32(static_cast<uint32_t>(item.obs_dim));
  w.put_u32(static_cast<uint32_t>(item.num_actions));
  for (const auto& obs : item.observations)
    for (float v : obs) w.put_f32(v);
  for (int a : item.actions) w.put_u32(static_cast<uint32_t>(a));
  for (float v : item.rewards) w.put_f32(v);
  for (float v : item.discounts) w.put_f32(v);
  for (float v : item.behavior_log_probs) w.put_f32(v);
  for (float v : item.bootstrap_obs) w.put_f32(v);
}

vtrace::TrajectoryBatch decode_item(Reader& r) {
  vtrace::TrajectoryBatch item;
  item.agent_id = r.get_u32();
  const uint32_t steps = r.get_u32();
  const uint32_t obs_dim = r.get_u32();
  const uint32_t num_actions = r.get_u32();
  constexpr uint32_t kDimCap = 1u << 20;
  if (steps > kDimCap || obs_dim > kDimCap || num_actions > kDimCap)
    throw ProtocolError("trajectory dimensions out of range");
  item.obs_dim = static_cast<int>(obs_dim);
  item.num_actions = static_cast<int>(num_actions);
  item.observations.resize(steps);
  for (auto& obs : item.observations) {
    obs.resize(obs_dim);
    for (auto& v : obs) v = r.get_f32();
  }
  item.actions.resize(steps);
  for (auto& a : item.actions) a = static_cast<int>(r.get_u32());
  item.rewards.resize(steps);
  for (auto& v : item.rewards) v = r.get_f32();
  item.discounts.resize(steps);
  for (auto& v : item.discounts) v = r.get_f32();
  item.behavior_log_probs.resize(steps);
  for (auto& v : item.behavior_log_probs) v = r.get_f32();
  item.bootstrap_obs.resize(obs_dim);
  for (auto& v : item.bootstrap_obs) v = r.get_f32();
  return item;
}

std::vector<uint8_t> encode_items(
    const std::vector<vtrace::TrajectoryBatch>& items) {
  Writer w;
  for (const auto& item : items) encode_item(w, item);
  return w.take();
}

std::vector<vtrace::TrajectoryBatch> decode_items(
    const std::vector<uint8_t>& payload) {
  Reader r(payload);
  std::vector<vtrace::TrajectoryBatch> items;
  while (r.remaining() > 0) items.push_back(decode_item(r));
  return items;
}

std::vector<uint8_t> encode_stats(const replay::BufferStats& stats) {
  Writer w;
  w.put_u64(stats.items_written);
  w.put_u64(stats.items_sampled);
  w.put_u64(stats.items_dropped);
  w.put_u64(stats.current_size);
  return w.take();
}

replay::BufferStats decode_stats(const std::vector<uint8_t>& payload) {
  Reader r(payload);
  replay::BufferStats stats;
  stats.items_written = r.get_u64();
  stats.items_sampled = r.get_u64();
  stats.items_dropped = r.get_u64();
  stats.current_size = r.get_u64();
  r.expect_end();
  return stats;
}

std::vector<uint8_t> encode_error(ErrorCode code, const std::string& message) {
  Writer w;
  w.put_u16(static_cast<uint16_t>(code));
  w.put_bytes(reinterpret_cast<const uint8_t*>(message.data()),
              message.size());
  return w.take();
}

std::pair<ErrorCode, std::string> decode_error(
    const std::vector<uint8_t>& payload) {
  Reader r(payload);
  const uint16_t code = r.get_u16();
  std::string message;
  message.reserve(r.remaining());
  while (r.remaining() > 0) message.push_back(static_cast<char>(r.get_u8()));
  return {static_cast<ErrorCode>(code), message};
}

std::vector<uint8_t> encode_infer_request(const InferRequest& req) {
  Writer w;
  w.put_u32(req.request_id);
  w.put_u32(req.agent_id);
  for (float v : req.observation) w.put_f32(v);
  return w.take();
}

InferRequest decode_infer_request(const std::vector<uint8_t>& payload) {
  Reader r(payload);
  InferRequest req;
  req.request_id = r.get_u32();
  req.agent_id = r.get_u32();
  if (r.remaining() % 4 != 0)
    throw ProtocolError("observation bytes not a multiple of 4");
  req.observation.resize(r.remaining() / 4);
  for (auto& v : req.observation) v = r.get_f32();
  return req;
}

std::vector<uint8_t> encode_infer_response(const InferResponse& resp) {
  Writer w;
  w.put_u32(resp.request_id);
  w.put_u32(resp.action);
  w.put_f32(resp.log_prob);
  w.put_f32(resp.value);
  w.put_u64(resp.param_version);
  return w.take();
}

InferResponse decode_infer_response(const std::vector<uint8_t>& payload) {
  Reader r(payload);
  InferResponse resp;
  resp.request_id = r.get_u32();
  resp.action = r.get_u32();
  resp.log_prob = r.get_f32();
  resp.value = r.get_f32();
  resp.param_version = r.get_u64();
  r.expect_end();
  return resp;
}

std::vector<uint8_t> encode_get_params_request(uint32_t agent_id) {
  Writer w;
  w.put_u32(agent_id);
  return w.take();
}

uint32_t decode_get_params_request(const std::vector<uint8_t>& payload) {
  Reader r(payload);
  const uint32_t agent_id = r.get_u32();
  r.expect_end();
  return agent_id;
}

std::vector<uint8_t> encode_params_response(const nn::Params& params) {
  Writer w;
  w.put_u64(params.version);
  for (const auto* tensor : params.fields())
    for (float v : *tensor) w.put_f32(v);
  return w.take();
}

nn::Params decode_params_response(const std::vector<uint8_t>& payload,
                                  const nn::NetSpec& spec) {
  Reader r(payload);
  nn::Params params;
  static_cast<nn::Tensors&>(params) = nn::zeros_like(spec);
  params.spec = spec;
  params.version = r.get_u64();
  for (auto* tensor : params.fields())
    for (auto& v : *tensor) v = r.get_f32();
  r.expect_end();
  return params;
}

}  // namespace marl::wire
