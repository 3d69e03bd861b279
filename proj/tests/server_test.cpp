#include <gtest/gtest.h>

#include <chrono>
#include <thread>

#include "granular/live/server.hpp"

// After Eigen: <resolv.h> (pulled in by httplib) defines a `_res` macro.
#include <httplib.h>

using namespace granular;
using namespace granular::live;
using namespace std::chrono_literals;

namespace {

BuiltScene demo_scene() {
  return build_scene(parse_scene(R"(
version = 1
name = "live"
seed = 2
r_lr = 0.04
duration = 100.0
[[entities]]
name = "sand"
shape = { type = "box", size = [0.2, 0.2, 0.2] }
translation = [0.0, 0.12, 0.0]
[[entities]]
name = "floor"
role = "boundary"
shape = { type = "plane", size = [0.5, 0.0, 0.5] }
translation = [0.0, -0.04, 0.0]
[[entities]]
name = "scoop"
role = "rigid_kinematic"
shape = { type = "box", size = [0.04, 0.12, 0.12] }
translation = [-0.25, 0.08, 0.0]
)"));
}

ServerOptions quiet(std::uint32_t decimate = 1) {
  ServerOptions o;
  o.port = 0;
  o.decimate = decimate;
  o.log = nullptr;
  return o;
}

// Minimal blocking WebSocket client.
class WsClient {
 public:
  explicit WsClient(std::uint16_t port, const std::string& path = "/session") {
    fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    sockaddr_in a{};
    a.sin_family = AF_INET;
    a.sin_port = htons(port);
    a.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    if (::connect(fd_, reinterpret_cast<sockaddr*>(&a), sizeof a) != 0) throw std::runtime_error("connect");
    timeval tv{10, 0};
    ::setsockopt(fd_, SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof tv);
    const std::string req = "GET " + path +
                            " HTTP/1.1\r\nHost: localhost\r\nUpgrade: websocket\r\nConnection: Upgrade\r\n"
                            "Sec-WebSocket-Key: dGhlIHNhbXBsZSBub25jZQ==\r\nSec-WebSocket-Version: 13\r\n\r\n";
    ::send(fd_, req.data(), req.size(), MSG_NOSIGNAL);
    std::string head;
    char c;
    while (head.size() < 4 || head.compare(head.size() - 4, 4, "\r\n\r\n") != 0) {
      if (::recv(fd_, &c, 1, 0) != 1) throw std::runtime_error("handshake");
      head.push_back(c);
    }
    response_ = head;
  }

  ~WsClient() { ::close(fd_); }

  const std::string& response() const { return response_; }

  std::vector<std::uint8_t> receive() {
    std::uint8_t h[2];
    if (!read(h, 2)) throw std::runtime_error("closed");
    std::uint64_t len = h[1] & 0x7F;
    if (len == 126) {
      std::uint8_t e[2];
      read(e, 2);
      len = (std::uint64_t(e[0]) << 8) | e[1];
    } else if (len == 127) {
      std::uint8_t e[8];
      read(e, 8);
      len = 0;
      for (auto b : e) len = (len << 8) | b;
    }
    std::vector<std::uint8_t> payload(len);
    if (len && !read(payload.data(), len)) throw std::runtime_error("short payload");
    return payload;
  }

  FrameRecord receive_frame() {
    for (;;) {
      const auto m = receive();
      if (!m.empty() && m[0] == kTagFrame) return decode_frame(m);
    }
  }

  void send(const std::vector<std::uint8_t>& payload) {
    std::vector<std::uint8_t> f{0x82};
    f.push_back(static_cast<std::uint8_t>(0x80 | payload.size()));  // payloads < 126 only
    const std::uint8_t mask[4] = {0x12, 0x34, 0x56, 0x78};
    f.insert(f.end(), mask, mask + 4);
    for (std::size_t i = 0; i < payload.size(); ++i) f.push_back(payload[i] ^ mask[i % 4]);
    ::send(fd_, f.data(), f.size(), MSG_NOSIGNAL);
  }

 private:
  bool read(void* p, std::size_t n) {
    auto* c = static_cast<char*>(p);
    while (n) {
      const ssize_t k = ::recv(fd_, c, n, 0);
      if (k <= 0) return false;
      c += k;
      n -= std::size_t(k);
    }
    return true;
  }

  int fd_ = -1;
  std::string response_;
};

template <class Pred>
bool wait_for(Pred p, std::chrono::milliseconds limit = 10s) {
  const auto end = std::chrono::steady_clock::now() + limit;
  while (!p()) {
    if (std::chrono::steady_clock::now() > end) return false;
    std::this_thread::sleep_for(5ms);
  }
  return true;
}

}  // namespace

TEST(WebSocket, AcceptKeyExample) {
  EXPECT_EQ(granular::live::detail::websocket_accept_key("dGhlIHNhbXBsZSBub25jZQ=="), "s3pPLMBiTxaQ9kYGzzhZRbK+xOo=");
}

TEST(ParseBind, Examples) {
  EXPECT_EQ(parse_bind("127.0.0.1:9000"), (std::pair<std::string, std::uint16_t>{"127.0.0.1", 9000}));
  EXPECT_EQ(parse_bind(":0").first, "0.0.0.0");
  EXPECT_THROW(parse_bind("localhost"), ParameterError);
  EXPECT_THROW(parse_bind("h:70000"), ParameterError);
  EXPECT_THROW(parse_bind("h:12x"), ParameterError);
}

TEST(Server, ManifestFirstThenFrames) {
  const BuiltScene scene = demo_scene();
  Server server(scene, quiet(4));
  server.start();
  WsClient ws(server.port());
  EXPECT_NE(ws.response().find("101"), std::string::npos);
  EXPECT_NE(ws.response().find("s3pPLMBiTxaQ9kYGzzhZRbK+xOo="), std::string::npos);

  const auto first = ws.receive();
  ASSERT_FALSE(first.empty());
  ASSERT_EQ(first[0], kTagManifest);
  const auto manifest = nlohmann::json::parse(first.begin() + 1, first.end());
  EXPECT_EQ(manifest["lr_count"], scene.lr.size());
  EXPECT_EQ(manifest["decimate"], 4);

  std::uint32_t prev = 0;
  for (int k = 0; k < 5; ++k) {
    const FrameRecord f = ws.receive_frame();
    EXPECT_GT(f.index, prev);
    EXPECT_NEAR(f.time, f.index * scene.hr_params.dt_hr, 1e-9);
    EXPECT_EQ(f.lr.size(), scene.lr.size());
    EXPECT_EQ(f.hr.size(), (scene.hr.size() + 3) / 4);
    prev = f.index;
  }
  server.stop();
}

TEST(Server, HttpManifestAndNotFound) {
  const BuiltScene scene = demo_scene();
  Server server(scene, quiet());
  server.start();
  httplib::Client http("127.0.0.1", server.port());
  const auto m = http.Get("/manifest");
  ASSERT_TRUE(m);
  EXPECT_EQ(m->status, 200);
  EXPECT_EQ(nlohmann::json::parse(m->body), manifest_json(scene));
  const auto nf = http.Get("/nope.js");
  ASSERT_TRUE(nf);
  EXPECT_EQ(nf->status, 404);
  const auto plain = http.Get("/session");
  ASSERT_TRUE(plain);
  EXPECT_EQ(plain->status, 400);
  server.stop();
}

TEST(Server, StaticFiles) {
  const auto dir = std::filesystem::temp_directory_path() / "granular_web_static";
  std::filesystem::create_directories(dir);
  std::ofstream(dir / "index.html") << "<html>viewer</html>";
  ServerOptions o = quiet();
  o.web_dir = dir;
  Server server(demo_scene(), o);
  server.start();
  httplib::Client http("127.0.0.1", server.port());
  const auto r = http.Get("/");
  ASSERT_TRUE(r);
  EXPECT_EQ(r->status, 200);
  EXPECT_EQ(r->body, "<html>viewer</html>");
  EXPECT_EQ(r->get_header_value("Content-Type"), "text/html");
  const auto up = http.Get("/../etc/passwd");
  ASSERT_TRUE(up);
  EXPECT_EQ(up->status, 404);
  server.stop();
}

TEST(Server, PauseResumeKeepsSimTimeContiguous) {
  Server server(demo_scene(), quiet());
  server.start();
  WsClient ws(server.port());
  std::uint32_t last = ws.receive_frame().index;
  ws.send(encode_command({InputCommand::Kind::Pause, 0, 0.0, {}, {}}));
  ASSERT_TRUE(wait_for([&] { return server.paused(); }));
  const auto at_pause = server.frames_emitted();
  std::this_thread::sleep_for(200ms);
  EXPECT_EQ(server.frames_emitted(), at_pause);

  // Drain what was queued before the pause.
  while (last < at_pause) last = ws.receive_frame().index;
  EXPECT_EQ(last, at_pause);
  ws.send(encode_command({InputCommand::Kind::Resume, 0, 0.0, {}, {}}));
  const FrameRecord next = ws.receive_frame();
  EXPECT_EQ(next.index, last + 1);
  EXPECT_NEAR(next.time, next.index * 0.0167, 1e-9);
  server.stop();
}

TEST(Server, NudgeMovesKinematicBody) {
  const BuiltScene scene = demo_scene();
  const auto& rec = scene.entities[2];
  Server server(scene, quiet());
  server.start();
  WsClient ws(server.port());
  const FrameRecord before = ws.receive_frame();
  auto mean_x = [&](const FrameRecord& f) {
    double s = 0.0;
    for (std::size_t i = rec.lr_begin; i < rec.lr_end; ++i) s += f.lr[i][0];
    return s / double(rec.lr_end - rec.lr_begin);
  };
  ws.send(encode_command({InputCommand::Kind::Nudge, 0, 0.0, {0.05f, 0.0f, 0.0f}, {}}));
  ASSERT_TRUE(wait_for([&] { return server.commands_applied() == 1; }));
  FrameRecord after;
  for (int k = 0; k < 10; ++k) after = ws.receive_frame();
  EXPECT_NEAR(mean_x(after) - mean_x(before), 0.05, 1e-5);

  // Rejected: not a body.
  ws.send(encode_command({InputCommand::Kind::Nudge, 9, 0.0, {0.05f, 0.0f, 0.0f}, {}}));
  // Ignored: malformed message.
  ws.send({kTagCommand, 2, 0});
  ws.send(encode_command({InputCommand::Kind::Pause, 0, 0.0, {}, {}}));
  ASSERT_TRUE(wait_for([&] { return server.paused(); }));
  EXPECT_EQ(server.commands_applied(), 2u);
  server.stop();
}

TEST(Server, ResetRestartsFrameCount) {
  Server server(demo_scene(), quiet());
  server.start();
  WsClient ws(server.port());
  for (int k = 0; k < 3; ++k) ws.receive_frame();
  ws.send(encode_command({InputCommand::Kind::Reset, 0, 0.0, {}, {}}));
  ASSERT_TRUE(wait_for([&] { return server.commands_applied() == 1; }));
  bool restarted = false;
  for (int k = 0; k < 10 && !restarted; ++k) restarted = ws.receive_frame().index <= 2;
  EXPECT_TRUE(restarted);
  server.stop();
}

TEST(Server, SlowClientDoesNotStall) {
  Server server(demo_scene(), quiet());
  server.start();
  WsClient stalled(server.port());  // never reads
  WsClient reader(server.port());
  ASSERT_TRUE(wait_for([&] { return server.client_count() == 2; }));
  const auto start = server.frames_emitted();
  std::uint32_t last = 0;
  for (int k = 0; k < 60; ++k) last = reader.receive_frame().index;
  EXPECT_GE(server.frames_emitted(), start + 59);
  EXPECT_GT(last, start);
  server.stop();
}

TEST(Server, BindFailureIsIoError) {
  Server a(demo_scene(), quiet());
  a.start();
  ServerOptions o = quiet();
  o.port = a.port();
  Server b(demo_scene(), o);
  EXPECT_THROW(b.start(), IoError);
  a.stop();
}

TEST(Server, RejectsZeroDecimation) {
  EXPECT_THROW(Server(demo_scene(), quiet(0)), ParameterError);
}
