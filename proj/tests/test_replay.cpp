#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <sys/socket.h>

#include <atomic>
#include <chrono>
#include <cstring>
#include <map>
#include <set>
#include <thread>
#include <vector>

#include "doctest.h"
#include "marl/netio.hpp"
#include "marl/replay.hpp"
#include "marl/replay_net.hpp"
#include "marl/wire.hpp"

using namespace marl;
using namespace std::chrono_literals;

namespace {

// A small valid trajectory whose contents are a deterministic function of
// (writer, id), so items can be tracked through the buffer and compared
// bit-for-bit after a round trip.
vtrace::TrajectoryBatch make_item(uint32_t writer, uint32_t id) {
  vtrace::TrajectoryBatch item;
  item.agent_id = writer;
  item.obs_dim = 3;
  item.num_actions = 4;
  const size_t steps = 2 + id % 3;
  for (size_t t = 0; t < steps; ++t) {
    item.observations.push_back({static_cast<float>(id), static_cast<float>(t),
                                 0.25f * static_cast<float>(writer)});
    item.actions.push_back(static_cast<int>((id + t) % 4));
    item.rewards.push_back(static_cast<float>(id) * 0.5f - 1.0f);
    item.discounts.push_back(t + 1 == steps ? 0.0f : 1.0f);
    item.behavior_log_probs.push_back(-1.375f - static_cast<float>(t));
  }
  item.rewards[0] = static_cast<float>(id);  // unique tag, exact in f32
  item.bootstrap_obs = {0.0f, -1.0f, static_cast<float>(id)};
  return item;
}

uint32_t item_id(const vtrace::TrajectoryBatch& item) {
  return static_cast<uint32_t>(item.rewards[0]);
}

std::vector<uint8_t> item_bytes(const vtrace::TrajectoryBatch& item) {
  wire::Writer w;
  wire::encode_item(w, item);
  return w.take();
}

}  // namespace

TEST_CASE("write then sample returns the identical item") {
  replay::ReplayQueue q({.capacity = 8, .sample_batch_size = 1});
  const auto item = make_item(0, 42);
  q.write(item);
  const auto out = q.sample(1);
  REQUIRE(out.size() == 1);
  CHECK(item_bytes(out[0]) == item_bytes(item));
  const auto s = q.stats();
  CHECK(s.items_written == 1);
  CHECK(s.items_sampled == 1);
  CHECK(s.items_dropped == 0);
  CHECK(s.current_size == 0);
}

TEST_CASE("overflow drops the oldest unsampled item") {
  replay::ReplayQueue q({.capacity = 2, .sample_batch_size = 1});
  q.write(make_item(0, 1));
  q.write(make_item(0, 2));
  q.write(make_item(0, 3));
  const auto out = q.sample(2);
  REQUIRE(out.size() == 2);
  CHECK(item_id(out[0]) == 2);
  CHECK(item_id(out[1]) == 3);
  const auto s = q.stats();
  CHECK(s.items_written == 3);
  CHECK(s.items_dropped == 1);
  CHECK(s.items_sampled == 2);
  CHECK(s.current_size == 0);
}

TEST_CASE("samples come out in FIFO order across calls") {
  replay::ReplayQueue q({.capacity = 16, .sample_batch_size = 2});
  for (uint32_t id = 1; id <= 5; ++id) q.write(make_item(0, id));
  const auto first = q.sample(2);
  const auto second = q.sample(2);
  CHECK(item_id(first[0]) == 1);
  CHECK(item_id(first[1]) == 2);
  CHECK(item_id(second[0]) == 3);
  CHECK(item_id(second[1]) == 4);
  CHECK(q.stats().current_size == 1);
}

TEST_CASE("sample blocks until a concurrent write arrives") {
  replay::ReplayQueue q({.capacity = 4, .sample_batch_size = 1});
  std::atomic<bool> written{false};
  std::atomic<bool> order_ok{false};
  std::thread sampler([&] {
    const auto out = q.sample(1);
    order_ok = written.load() && item_id(out[0]) == 7;
  });
  std::this_thread::sleep_for(30ms);
  written = true;
  q.write(make_item(0, 7));
  sampler.join();
  CHECK(order_ok.load());
}

TEST_CASE("close wakes a waiting sampler with the closed error") {
  replay::ReplayQueue q({.capacity = 4, .sample_batch_size = 1});
  std::atomic<bool> got_closed{false};
  std::thread sampler([&] {
    try {
      q.sample(1);
    } catch (const replay::Closed&) {
      got_closed = true;
    }
  });
  std::this_thread::sleep_for(20ms);
  q.close();
  sampler.join();
  CHECK(got_closed.load());
  CHECK_THROWS_AS(q.sample(1), replay::Closed);
  CHECK_THROWS_AS(q.write(make_item(0, 1)), replay::Closed);
}

TEST_CASE("a closed queue still drains items already stored") {
  replay::ReplayQueue q({.capacity = 4, .sample_batch_size = 1});
  q.write(make_item(0, 1));
  q.write(make_item(0, 2));
  q.close();
  const auto out = q.sample(2);
  CHECK(out.size() == 2);
  CHECK_THROWS_AS(q.sample(1), replay::Closed);
}

TEST_CASE("malformed items are rejected with bad-item") {
  replay::ReplayQueue q({.capacity = 4, .sample_batch_size = 1});

  auto lengths = make_item(0, 1);
  lengths.rewards.pop_back();
  CHECK_THROWS_AS(q.write(lengths), replay::BadItem);

  auto nonfinite = make_item(0, 2);
  nonfinite.rewards[0] = std::numeric_limits<float>::infinity();
  CHECK_THROWS_AS(q.write(nonfinite), replay::BadItem);

  auto discount = make_item(0, 3);
  discount.discounts[0] = 0.5f;
  CHECK_THROWS_AS(q.write(discount), replay::BadItem);

  auto action = make_item(0, 4);
  action.actions[0] = 9;
  CHECK_THROWS_AS(q.write(action), replay::BadItem);

  CHECK(q.stats().items_written == 0);
}

TEST_CASE("configuration and request bounds are enforced") {
  CHECK_THROWS_AS(
      replay::ReplayQueue({.capacity = 1, .sample_batch_size = 2}),
      std::invalid_argument);
  CHECK_THROWS_AS(
      replay::ReplayQueue({.capacity = 4, .sample_batch_size = 0}),
      std::invalid_argument);
  replay::ReplayQueue q({.capacity = 2, .sample_batch_size = 1});
  CHECK_THROWS_AS(q.sample(3), std::invalid_argument);
}

TEST_CASE("sample_for times out empty and sample_up_to never blocks") {
  replay::ReplayQueue q({.capacity = 4, .sample_batch_size = 1});
  CHECK(q.sample_for(1, 10ms).empty());
  CHECK(q.sample_up_to(3).empty());
  q.write(make_item(0, 5));
  q.write(make_item(0, 6));
  const auto got = q.sample_up_to(8);
  REQUIRE(got.size() == 2);
  CHECK(item_id(got[0]) == 5);
  const auto timed = q.sample_for(1, 10ms);
  CHECK(timed.empty());
}

TEST_CASE("four concurrent writers deliver every item exactly once") {
  replay::ReplayQueue q({.capacity = 512, .sample_batch_size = 1});
  constexpr int kWriters = 4;
  constexpr uint32_t kPerWriter = 100;
  std::vector<std::thread> writers;
  for (int w = 0; w < kWriters; ++w)
    writers.emplace_back([&q, w] {
      for (uint32_t id = 0; id < kPerWriter; ++id)
        q.write(make_item(static_cast<uint32_t>(w), id));
    });

  std::map<uint32_t, std::vector<uint32_t>> seen;  // writer -> ids in order
  size_t total = 0;
  while (total < kWriters * kPerWriter) {
    const auto out = q.sample(10);
    for (const auto& item : out) seen[item.agent_id].push_back(item_id(item));
    total += out.size();
    const auto s = q.stats();
    CHECK(s.current_size ==
          s.items_written - s.items_sampled - s.items_dropped);
  }
  for (auto& t : writers) t.join();

  const auto s = q.stats();
  CHECK(s.items_written == kWriters * kPerWriter);
  CHECK(s.items_sampled == kWriters * kPerWriter);
  CHECK(s.items_dropped == 0);
  CHECK(s.current_size == 0);
  for (int w = 0; w < kWriters; ++w) {
    const auto& ids = seen[static_cast<uint32_t>(w)];
    REQUIRE(ids.size() == kPerWriter);
    // Exactly once and in each writer's submission order.
    for (uint32_t i = 0; i < kPerWriter; ++i) CHECK(ids[i] == i);
  }
}

TEST_CASE("dropped and sampled partition the written items under overflow") {
  replay::ReplayQueue q({.capacity = 8, .sample_batch_size = 1});
  for (uint32_t id = 0; id < 50; ++id) q.write(make_item(0, id));
  std::set<uint32_t> sampled;
  for (;;) {
    const auto out = q.sample_up_to(4);
    if (out.empty()) break;
    for (const auto& item : out) CHECK(sampled.insert(item_id(item)).second);
  }
  const auto s = q.stats();
  CHECK(s.items_written == 50);
  CHECK(s.items_sampled == sampled.size());
  CHECK(s.items_sampled + s.items_dropped == 50);
  CHECK(s.current_size == 0);
  // The survivors are exactly the newest `capacity` items.
  for (uint32_t id = 42; id < 50; ++id) CHECK(sampled.count(id) == 1);
}

TEST_CASE("frame header round trip and rejection") {
  const std::vector<uint8_t> payload = {1, 2, 3};
  const auto frame = wire::pack_frame(wire::MsgType::kSampleReq, payload);
  REQUIRE(frame.size() == wire::kHeaderSize + 3);
  CHECK(frame[0] == wire::kMagic);
  CHECK(frame[1] == 2);
  // Length is big-endian.
  CHECK(frame[2] == 0);
  CHECK(frame[3] == 0);
  CHECK(frame[4] == 0);
  CHECK(frame[5] == 3);

  const auto header = wire::parse_header(frame.data());
  CHECK(header.type == wire::MsgType::kSampleReq);
  CHECK(header.payload_len == 3);

  uint8_t bad_magic[wire::kHeaderSize] = {0x00, 2, 0, 0, 0, 0};
  CHECK_THROWS_AS(wire::parse_header(bad_magic), wire::ProtocolError);
  uint8_t bad_type[wire::kHeaderSize] = {wire::kMagic, 99, 0, 0, 0, 0};
  CHECK_THROWS_AS(wire::parse_header(bad_type), wire::ProtocolError);
  uint8_t huge[wire::kHeaderSize] = {wire::kMagic, 1, 0xff, 0xff, 0xff, 0xff};
  CHECK_THROWS_AS(wire::parse_header(huge), wire::ProtocolError);
}

TEST_CASE("trajectory codec round trips bit-exactly") {
  auto item = make_item(3, 77);
  item.rewards[1] = -0.0f;  // sign of zero must survive
  const auto bytes = item_bytes(item);
  wire::Reader r(bytes);
  const auto back = wire::decode_item(r);
  r.expect_end();
  CHECK(item_bytes(back) == bytes);
  CHECK(back.agent_id == 3);
  CHECK(back.obs_dim == 3);
  CHECK(back.num_actions == 4);
  CHECK(std::signbit(back.rewards[1]));

  // Truncated payloads are rejected.
  auto cut = bytes;
  cut.pop_back();
  CHECK_THROWS_AS(wire::decode_items(cut), wire::ProtocolError);
}

TEST_CASE("multi-item, stats and error codecs round trip") {
  std::vector<vtrace::TrajectoryBatch> items = {make_item(0, 1),
                                                make_item(1, 2)};
  const auto payload = wire::encode_items(items);
  const auto back = wire::decode_items(payload);
  REQUIRE(back.size() == 2);
  CHECK(item_bytes(back[0]) == item_bytes(items[0]));
  CHECK(item_bytes(back[1]) == item_bytes(items[1]));

  replay::BufferStats stats{10, 7, 2, 1};
  const auto sbytes = wire::encode_stats(stats);
  CHECK(sbytes.size() == 32);
  const auto sback = wire::decode_stats(sbytes);
  CHECK(sback.items_written == 10);
  CHECK(sback.items_sampled == 7);
  CHECK(sback.items_dropped == 2);
  CHECK(sback.current_size == 1);

  const auto ebytes =
      wire::encode_error(wire::ErrorCode::kBadItem, "length mismatch");
  const auto [code, message] = wire::decode_error(ebytes);
  CHECK(code == wire::ErrorCode::kBadItem);
  CHECK(message == "length mismatch");
}

TEST_CASE("inference codecs round trip") {
  wire::InferRequest req;
  req.request_id = 9001;
  req.agent_id = 2;
  req.observation = {0.5f, -1.25f, 3.0f};
  const auto rbytes = wire::encode_infer_request(req);
  const auto rback = wire::decode_infer_request(rbytes);
  CHECK(rback.request_id == 9001);
  CHECK(rback.agent_id == 2);
  CHECK(rback.observation == req.observation);

  wire::InferResponse resp;
  resp.request_id = 9001;
  resp.action = 3;
  resp.log_prob = -1.0986123f;
  resp.value = 0.125f;
  resp.param_version = 42;
  const auto bytes = wire::encode_infer_response(resp);
  const auto back = wire::decode_infer_response(bytes);
  CHECK(back.request_id == resp.request_id);
  CHECK(back.action == resp.action);
  CHECK(back.log_prob == resp.log_prob);
  CHECK(back.value == resp.value);
  CHECK(back.param_version == resp.param_version);

  CHECK(wire::decode_get_params_request(
            wire::encode_get_params_request(5)) == 5);

  nn::NetSpec spec{.obs_dim = 2, .hidden_dim = 3, .num_actions = 2};
  const nn::Params params = nn::init_params(spec, 123);
  auto versioned = params;
  versioned.version = 17;
  const auto pbytes = wire::encode_params_response(versioned);
  const auto pback = wire::decode_params_response(pbytes, spec);
  CHECK(pback.version == 17);
  CHECK(static_cast<const nn::Tensors&>(pback) ==
        static_cast<const nn::Tensors&>(versioned));
}

TEST_CASE("remote write round trips bit-exactly through the server") {
  auto queue = std::make_shared<replay::ReplayQueue>(
      replay::BufferConfig{.capacity = 16, .sample_batch_size = 1});
  replay::ReplayServer server(queue);
  replay::RemoteReplay client(server.port());

  const auto item = make_item(1, 99);
  client.write(item);
  const auto local = queue->sample(1);
  REQUIRE(local.size() == 1);
  CHECK(item_bytes(local[0]) == item_bytes(item));

  queue->write(make_item(2, 100));
  const auto remote = client.sample(1);
  REQUIRE(remote.size() == 1);
  CHECK(item_bytes(remote[0]) == item_bytes(make_item(2, 100)));

  const auto s = client.stats();
  CHECK(s.items_written == 2);
  CHECK(s.items_sampled == 2);
  CHECK(s.current_size == 0);
  server.stop();
}

TEST_CASE("remote sampler blocks until data arrives") {
  auto queue = std::make_shared<replay::ReplayQueue>(
      replay::BufferConfig{.capacity = 16, .sample_batch_size = 1});
  replay::ReplayServer server(queue);
  std::atomic<bool> written{false};
  std::atomic<bool> order_ok{false};
  std::thread sampler([&] {
    replay::RemoteReplay client(server.port());
    const auto out = client.sample(1);
    order_ok = written.load() && out.size() == 1 && item_id(out[0]) == 11;
  });
  std::this_thread::sleep_for(50ms);
  written = true;
  replay::RemoteReplay writer(server.port());
  writer.write(make_item(0, 11));
  sampler.join();
  CHECK(order_ok.load());
  server.stop();
}

TEST_CASE("closing the queue surfaces as the closed error remotely") {
  auto queue = std::make_shared<replay::ReplayQueue>(
      replay::BufferConfig{.capacity = 16, .sample_batch_size = 1});
  replay::ReplayServer server(queue);
  std::atomic<bool> got_closed{false};
  std::thread sampler([&] {
    replay::RemoteReplay client(server.port());
    try {
      client.sample(1);
    } catch (const replay::Closed&) {
      got_closed = true;
    }
  });
  std::this_thread::sleep_for(40ms);
  queue->close();
  sampler.join();
  CHECK(got_closed.load());
  server.stop();
}

TEST_CASE("bad magic earns a protocol error and costs only that connection") {
  auto queue = std::make_shared<replay::ReplayQueue>(
      replay::BufferConfig{.capacity = 16, .sample_batch_size = 1});
  replay::ReplayServer server(queue);

  net::TcpSocket raw = net::TcpSocket::connect_loopback(server.port(), 1000ms);
  const uint8_t junk[wire::kHeaderSize] = {0x00, 1, 0, 0, 0, 0};
  ::send(raw.fd(), junk, sizeof junk, 0);
  const net::Frame reply = raw.recv_frame();
  CHECK(reply.type == wire::MsgType::kError);
  const auto [code, message] = wire::decode_error(reply.payload);
  CHECK(code == wire::ErrorCode::kProtocol);
  // The server hangs up on the offender afterwards.
  CHECK_THROWS_AS(raw.recv_frame(), net::ConnectionClosed);

  // A well-behaved connection is unaffected.
  replay::RemoteReplay client(server.port());
  client.write(make_item(0, 1));
  CHECK(client.sample(1).size() == 1);
  server.stop();
}

TEST_CASE("unsupported message types are refused politely") {
  auto queue = std::make_shared<replay::ReplayQueue>(
      replay::BufferConfig{.capacity = 16, .sample_batch_size = 1});
  replay::ReplayServer server(queue);
  net::TcpSocket raw = net::TcpSocket::connect_loopback(server.port(), 1000ms);
  raw.send_frame(wire::MsgType::kInferReq, {});
  const net::Frame reply = raw.recv_frame();
  CHECK(reply.type == wire::MsgType::kError);
  CHECK(wire::decode_error(reply.payload).first ==
        wire::ErrorCode::kBadRequest);
  server.stop();
}

TEST_CASE("connecting to a vacant port is refused") {
  auto queue = std::make_shared<replay::ReplayQueue>(
      replay::BufferConfig{.capacity = 4, .sample_batch_size = 1});
  uint16_t vacant;
  {
    replay::ReplayServer probe(queue);
    vacant = probe.port();
    probe.stop();
  }
  CHECK_THROWS_AS(replay::RemoteReplay(vacant, 500ms),
                  replay::ConnectionRefused);
}

TEST_CASE("rejected remote write surfaces on the next request") {
  auto queue = std::make_shared<replay::ReplayQueue>(
      replay::BufferConfig{.capacity = 4, .sample_batch_size = 1});
  replay::ReplayServer server(queue);
  replay::RemoteReplay client(server.port());
  queue->close();
  // The client validates locally, so hand-craft a stale write instead.
  net::TcpSocket raw = net::TcpSocket::connect_loopback(server.port(), 1000ms);
  wire::Writer w;
  wire::encode_item(w, make_item(0, 1));
  raw.send_frame(wire::MsgType::kWrite, w.bytes());
  const net::Frame reply = raw.recv_frame();
  CHECK(reply.type == wire::MsgType::kError);
  CHECK(wire::decode_error(reply.payload).first == wire::ErrorCode::kClosed);
  server.stop();
}

TEST_CASE("two remote writers and a remote sampler conserve a thousand items") {
  auto queue = std::make_shared<replay::ReplayQueue>(
      replay::BufferConfig{.capacity = 1000, .sample_batch_size = 1});
  replay::ReplayServer server(queue);
  constexpr uint32_t kPerWriter = 500;

  std::vector<std::thread> writers;
  for (uint32_t w = 0; w < 2; ++w)
    writers.emplace_back([&server, w] {
      replay::RemoteReplay client(server.port());
      for (uint32_t id = 0; id < kPerWriter; ++id)
        client.write(make_item(w, id));
    });

  std::map<uint32_t, std::vector<uint32_t>> seen;
  {
    replay::RemoteReplay sampler(server.port());
    size_t total = 0;
    while (total < 2 * kPerWriter) {
      const auto out = sampler.sample(25);
      for (const auto& item : out)
        seen[item.agent_id].push_back(item_id(item));
      total += out.size();
    }
    for (auto& t : writers) t.join();
    const auto s = sampler.stats();
    CHECK(s.items_written == 1000);
    CHECK(s.items_sampled == 1000);
    CHECK(s.items_dropped == 0);
    CHECK(s.current_size == 0);
  }

  for (uint32_t w = 0; w < 2; ++w) {
    REQUIRE(seen[w].size() == kPerWriter);
    for (uint32_t i = 0; i < kPerWriter; ++i) CHECK(seen[w][i] == i);
  }
  server.stop();
}

TEST_CASE("server stop wakes a blocked remote sampler") {
  auto queue = std::make_shared<replay::ReplayQueue>(
      replay::BufferConfig{.capacity = 4, .sample_batch_size = 1});
  auto server = std::make_unique<replay::ReplayServer>(queue);
  std::atomic<bool> unblocked{false};
  std::thread sampler([&, port = server->port()] {
    replay::RemoteReplay client(port);
    try {
      client.sample(1);
    } catch (const std::exception&) {
      unblocked = true;
    }
  });
  std::this_thread::sleep_for(40ms);
  server->stop();
  sampler.join();
  CHECK(unblocked.load());
}
