#pragma once

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <openssl/evp.h>
#include <openssl/sha.h>

#include <algorithm>
#include <atomic>
#include <cctype>
#include <chrono>
#include <condition_variable>
#include <cstring>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <list>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "granular/live/protocol.hpp"
#include "granular/simulation.hpp"

namespace granular::live {

struct ServerOptions {
  std::string host = "127.0.0.1";
  std::uint16_t port = 8080;  // 0 picks a free port
  std::uint32_t decimate = 1;
  std::optional<std::filesystem::path> web_dir;
  bool paced = true;  // sleep to align frames with wall-clock dt_hr
  std::function<void(const std::string&)> log = [](const std::string& m) { std::cerr << "[serve] " << m << '\n'; };
};

/// Splits "addr:port" (the port is required).
inline std::pair<std::string, std::uint16_t> parse_bind(const std::string& s) {
  const auto colon = s.rfind(':');
  if (colon == std::string::npos) throw ParameterError("bind address must be addr:port, got '" + s + "'");
  const std::string host = s.substr(0, colon);
  int port = -1;
  try {
    std::size_t used = 0;
    port = std::stoi(s.substr(colon + 1), &used);
    if (used != s.size() - colon - 1) port = -1;
  } catch (const std::exception&) {
  }
  if (port < 0 || port > 65535) throw ParameterError("bad port in bind address '" + s + "'");
  return {host.empty() ? "0.0.0.0" : host, static_cast<std::uint16_t>(port)};
}

namespace detail {

inline std::string websocket_accept_key(const std::string& client_key) {
  const std::string src = client_key + "258EAFA5-E914-47DA-95CA-C5AB0DC85B11";
  unsigned char digest[SHA_DIGEST_LENGTH];
  SHA1(reinterpret_cast<const unsigned char*>(src.data()), src.size(), digest);
  unsigned char b64[4 * ((SHA_DIGEST_LENGTH + 2) / 3) + 1];
  const int n = EVP_EncodeBlock(b64, digest, SHA_DIGEST_LENGTH);
  return std::string(reinterpret_cast<char*>(b64), static_cast<std::size_t>(n));
}

inline bool send_all(int fd, const void* data, std::size_t n) {
  const auto* p = static_cast<const char*>(data);
  while (n > 0) {
    const ssize_t k = ::send(fd, p, n, MSG_NOSIGNAL);
    if (k <= 0) {
      if (k < 0 && errno == EINTR) continue;
      return false;
    }
    p += k;
    n -= static_cast<std::size_t>(k);
  }
  return true;
}

inline bool recv_all(int fd, void* data, std::size_t n) {
  auto* p = static_cast<char*>(data);
  while (n > 0) {
    const ssize_t k = ::recv(fd, p, n, 0);
    if (k <= 0) {
      if (k < 0 && errno == EINTR) continue;
      return false;
    }
    p += k;
    n -= static_cast<std::size_t>(k);
  }
  return true;
}

/// Server-to-client frame header (unmasked, FIN set).
inline std::vector<std::uint8_t> ws_header(std::uint8_t opcode, std::size_t len) {
  std::vector<std::uint8_t> h{static_cast<std::uint8_t>(0x80 | opcode)};
  if (len < 126) {
    h.push_back(static_cast<std::uint8_t>(len));
  } else if (len <= 0xFFFF) {
    h.push_back(126);
    h.push_back(static_cast<std::uint8_t>(len >> 8));
    h.push_back(static_cast<std::uint8_t>(len));
  } else {
    h.push_back(127);
    for (int s = 56; s >= 0; s -= 8) h.push_back(static_cast<std::uint8_t>(std::uint64_t(len) >> s));
  }
  return h;
}

struct HttpRequest {
  std::string method;
  std::string path;
  std::map<std::string, std::string> headers;  // lower-case names
};

inline std::optional<HttpRequest> read_http_request(int fd) {
  std::string buf;
  char c;
  while (buf.size() < 16384) {
    const ssize_t k = ::recv(fd, &c, 1, 0);
    if (k <= 0) return std::nullopt;
    buf.push_back(c);
    if (buf.size() >= 4 && buf.compare(buf.size() - 4, 4, "\r\n\r\n") == 0) break;
  }
  std::istringstream in(buf);
  HttpRequest req;
  std::string version;
  if (!(in >> req.method >> req.path >> version)) return std::nullopt;
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line) && line != "\r") {
    const auto colon = line.find(':');
    if (colon == std::string::npos) continue;
    std::string name = line.substr(0, colon);
    std::transform(name.begin(), name.end(), name.begin(), [](unsigned char ch) { return std::tolower(ch); });
    std::string value = line.substr(colon + 1);
    const auto b = value.find_first_not_of(" \t");
    const auto e = value.find_last_not_of(" \t\r");
    req.headers[name] = b == std::string::npos ? "" : value.substr(b, e - b + 1);
  }
  return req;
}

inline void send_http(int fd, int status, const std::string& reason, const std::string& type,
                      const std::string& body) {
  std::ostringstream o;
  o << "HTTP/1.1 " << status << ' ' << reason << "\r\nContent-Type: " << type
    << "\r\nContent-Length: " << body.size() << "\r\nAccess-Control-Allow-Origin: *\r\nConnection: close\r\n\r\n"
    << body;
  const std::string s = o.str();
  send_all(fd, s.data(), s.size());
}

inline std::string content_type(const std::filesystem::path& p) {
  const auto ext = p.extension().string();
  if (ext == ".html") return "text/html";
  if (ext == ".js" || ext == ".mjs") return "text/javascript";
  if (ext == ".css") return "text/css";
  if (ext == ".json") return "application/json";
  if (ext == ".wasm") return "application/wasm";
  return "application/octet-stream";
}

}  // namespace detail

/// Live session: one simulation loop, broadcast to WebSocket clients on
/// /session, manifest on GET /manifest, optional static files.
///
/// Commands from clients are queued and applied only between frames, so a
/// frame never reflects a command that arrived after its LR steps began.
/// Each client has an outgoing queue of two messages; when it is full the
/// oldest is dropped, so a slow client never stalls the loop.
class Server {
 public:
  Server(BuiltScene scene, ServerOptions opts) : sim_(std::move(scene)), opts_(std::move(opts)) {
    if (opts_.decimate == 0) throw ParameterError("decimate must be >= 1");
    manifest_ = manifest_json(sim_.scene(), opts_.decimate).dump();
    manifest_msg_ = encode_manifest(sim_.scene(), opts_.decimate);
  }

  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  ~Server() { stop(); }

  /// Binds and starts the accept and simulation threads. Throws IoError if
  /// the address cannot be bound.
  void start() {
    addrinfo hints{};
    hints.ai_family = AF_INET;
    hints.ai_socktype = SOCK_STREAM;
    hints.ai_flags = AI_PASSIVE;
    addrinfo* res = nullptr;
    const std::string port = std::to_string(opts_.port);
    if (::getaddrinfo(opts_.host.c_str(), port.c_str(), &hints, &res) != 0 || !res) {
      throw IoError("cannot resolve bind address " + opts_.host);
    }
    listen_fd_ = ::socket(res->ai_family, res->ai_socktype, res->ai_protocol);
    const int one = 1;
    ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    const bool ok = listen_fd_ >= 0 && ::bind(listen_fd_, res->ai_addr, res->ai_addrlen) == 0 &&
                    ::listen(listen_fd_, 16) == 0;
    ::freeaddrinfo(res);
    if (!ok) {
      const std::string err = std::strerror(errno);
      if (listen_fd_ >= 0) ::close(listen_fd_);
      listen_fd_ = -1;
      throw IoError("cannot bind " + opts_.host + ":" + port + ": " + err);
    }
    sockaddr_in addr{};
    socklen_t len = sizeof addr;
    ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
    port_ = ntohs(addr.sin_port);
    running_ = true;
    accept_thread_ = std::thread([this] { accept_loop(); });
    sim_thread_ = std::thread([this] { sim_loop(); });
    log("listening on " + opts_.host + ":" + std::to_string(port_));
  }

  void stop() {
    {
      std::lock_guard lock(cmd_mutex_);
      if (!running_.exchange(false)) return;
    }
    cmd_cv_.notify_all();
    if (sim_thread_.joinable()) sim_thread_.join();
    if (listen_fd_ >= 0) {
      ::shutdown(listen_fd_, SHUT_RDWR);
      ::close(listen_fd_);
      listen_fd_ = -1;
    }
    if (accept_thread_.joinable()) accept_thread_.join();
    std::vector<std::shared_ptr<Client>> clients;
    {
      std::lock_guard lock(clients_mutex_);
      clients.assign(clients_.begin(), clients_.end());
    }
    for (auto& c : clients) c->close();
    std::vector<std::thread> threads;
    {
      std::lock_guard lock(threads_mutex_);
      threads.swap(conn_threads_);
    }
    for (auto& t : threads) {
      if (t.joinable()) t.join();
    }
  }

  /// Blocks until stop() is called from elsewhere.
  void wait() {
    std::unique_lock lock(cmd_mutex_);
    cmd_cv_.wait(lock, [&] { return !running_; });
  }

  std::uint16_t port() const { return port_; }
  std::uint64_t frames_emitted() const { return frames_emitted_; }
  std::uint64_t commands_applied() const { return commands_applied_; }
  bool paused() const { return paused_; }

  std::size_t client_count() const {
    std::lock_guard lock(clients_mutex_);
    return clients_.size();
  }

  /// Queue a command as if it came from a client.
  void submit(const InputCommand& c) {
    std::lock_guard lock(cmd_mutex_);
    commands_.push_back(c);
  }

 private:
  struct Client {
    int fd = -1;
    std::mutex mutex;
    std::condition_variable cv;
    struct Outgoing {
      std::uint8_t opcode;
      std::shared_ptr<const std::vector<std::uint8_t>> payload;
    };
    std::deque<Outgoing> queue;
    bool closed = false;
    std::uint32_t last_frame = 0;
    std::uint64_t dropped = 0;

    // Newest wins: at capacity the oldest queued message is discarded.
    void push(std::shared_ptr<const std::vector<std::uint8_t>> msg, std::uint8_t opcode = 0x2) {
      std::lock_guard lock(mutex);
      if (closed) return;
      if (queue.size() >= 2) {
        queue.pop_front();
        ++dropped;
      }
      queue.push_back({opcode, std::move(msg)});
      cv.notify_one();
    }

    void close() {
      std::lock_guard lock(mutex);
      if (!closed) {
        closed = true;
        ::shutdown(fd, SHUT_RDWR);
      }
      cv.notify_all();
    }
  };

  void log(const std::string& m) const {
    if (opts_.log) opts_.log(m);
  }

  void accept_loop() {
    while (running_) {
      pollfd p{listen_fd_, POLLIN, 0};
      const int r = ::poll(&p, 1, 100);
      if (r <= 0 || !running_) continue;
      const int fd = ::accept(listen_fd_, nullptr, nullptr);
      if (fd < 0) continue;
      const int one = 1;
      ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
      std::lock_guard lock(threads_mutex_);
      conn_threads_.emplace_back([this, fd] { handle_connection(fd); });
    }
  }

  void handle_connection(int fd) {
    const auto req = detail::read_http_request(fd);
    if (!req) {
      ::close(fd);
      return;
    }
    const std::string path = req->path.substr(0, req->path.find('?'));
    if (req->method != "GET") {
      detail::send_http(fd, 405, "Method Not Allowed", "text/plain", "GET only\n");
    } else if (path == "/session") {
      auto it = req->headers.find("sec-websocket-key");
      if (it == req->headers.end()) {
        detail::send_http(fd, 400, "Bad Request", "text/plain", "WebSocket upgrade required\n");
      } else {
        serve_websocket(fd, it->second);
      }
    } else if (path == "/manifest") {
      detail::send_http(fd, 200, "OK", "application/json", manifest_);
    } else {
      serve_static(fd, path);
    }
    ::close(fd);
  }

  void serve_static(int fd, const std::string& path) {
    if (!opts_.web_dir || path.find("..") != std::string::npos) {
      detail::send_http(fd, 404, "Not Found", "text/plain", "not found\n");
      return;
    }
    std::filesystem::path file = *opts_.web_dir / (path == "/" ? "index.html" : path.substr(1));
    std::ifstream in(file, std::ios::binary);
    if (!in) {
      detail::send_http(fd, 404, "Not Found", "text/plain", "not found\n");
      return;
    }
    std::stringstream ss;
    ss << in.rdbuf();
    detail::send_http(fd, 200, "OK", detail::content_type(file), ss.str());
  }

  void serve_websocket(int fd, const std::string& key) {
    const std::string resp =
        "HTTP/1.1 101 Switching Protocols\r\nUpgrade: websocket\r\nConnection: Upgrade\r\n"
        "Sec-WebSocket-Accept: " +
        detail::websocket_accept_key(key) + "\r\n\r\n";
    if (!detail::send_all(fd, resp.data(), resp.size())) return;

    auto client = std::make_shared<Client>();
    client->fd = fd;
    // The manifest goes out first, before the client can see any frame.
    const auto manifest = std::make_shared<const std::vector<std::uint8_t>>(manifest_msg_);
    {
      std::lock_guard lock(clients_mutex_);
      client->queue.push_back({0x2, manifest});
      clients_.push_back(client);
    }
    log("client connected (" + std::to_string(client_count()) + " total)");
    std::thread writer([this, client] { write_loop(*client); });
    read_loop(*client);
    client->close();
    writer.join();
    {
      std::lock_guard lock(clients_mutex_);
      clients_.remove(client);
    }
    log("client disconnected (last frame " + std::to_string(client->last_frame) + ", dropped " +
        std::to_string(client->dropped) + ")");
  }

  void write_loop(Client& c) {
    for (;;) {
      Client::Outgoing out;
      {
        std::unique_lock lock(c.mutex);
        c.cv.wait(lock, [&] { return c.closed || !c.queue.empty(); });
        if (c.closed) return;
        out = std::move(c.queue.front());
        c.queue.pop_front();
      }
      const auto& msg = out.payload;
      const auto header = detail::ws_header(out.opcode, msg->size());
      if (!detail::send_all(c.fd, header.data(), header.size()) ||
          !detail::send_all(c.fd, msg->data(), msg->size())) {
        c.close();  // this client only
        return;
      }
      if (out.opcode == 0x2 && msg->size() >= 9 && (*msg)[0] == kTagFrame) {
        std::memcpy(&c.last_frame, msg->data() + 5, 4);
      }
    }
  }

  void read_loop(Client& c) {
    std::vector<std::uint8_t> message;
    for (;;) {
      std::uint8_t h[2];
      if (!detail::recv_all(c.fd, h, 2)) return;
      const std::uint8_t opcode = h[0] & 0x0F;
      const bool fin = h[0] & 0x80;
      const bool masked = h[1] & 0x80;
      std::uint64_t len = h[1] & 0x7F;
      if (len == 126) {
        std::uint8_t e[2];
        if (!detail::recv_all(c.fd, e, 2)) return;
        len = (std::uint64_t(e[0]) << 8) | e[1];
      } else if (len == 127) {
        std::uint8_t e[8];
        if (!detail::recv_all(c.fd, e, 8)) return;
        len = 0;
        for (auto b : e) len = (len << 8) | b;
      }
      if (len > (1u << 20) || !masked) return;  // clients must mask; no huge messages
      std::uint8_t mask[4];
      if (!detail::recv_all(c.fd, mask, 4)) return;
      std::vector<std::uint8_t> payload(len);
      if (len && !detail::recv_all(c.fd, payload.data(), len)) return;
      for (std::size_t i = 0; i < payload.size(); ++i) payload[i] ^= mask[i % 4];

      if (opcode == 0x8) return;  // close
      if (opcode == 0x9) {
        c.push(std::make_shared<const std::vector<std::uint8_t>>(std::move(payload)), 0xA);
        continue;
      }
      if (opcode == 0xA) continue;
      message.insert(message.end(), payload.begin(), payload.end());
      if (!fin) continue;
      on_message(message);
      message.clear();
    }
  }

  void on_message(const std::vector<std::uint8_t>& msg) {
    try {
      const InputCommand cmd = decode_command(msg);
      std::lock_guard lock(cmd_mutex_);
      commands_.push_back(cmd);
    } catch (const FormatError& e) {
      log(std::string("ignored client message: ") + e.what());
    }
  }

  void apply(const InputCommand& c) {
    const std::string when = "at step boundary before frame " + std::to_string(sim_.frame_index() + 1);
    try {
      switch (c.kind) {
        case InputCommand::Kind::Pause: paused_ = true; break;
        case InputCommand::Kind::Resume: paused_ = false; break;
        case InputCommand::Kind::Reset: sim_.reset(); break;
        case InputCommand::Kind::SetTarget:
          sim_.set_goal(c.body, {rotation_from_axis_angle(Vec3(c.b[0], c.b[1], c.b[2])),
                                 Vec3(c.a[0], c.a[1], c.a[2])});
          break;
        case InputCommand::Kind::Nudge:
          sim_.nudge(c.body, Vec3(c.a[0], c.a[1], c.a[2]), Vec3(c.b[0], c.b[1], c.b[2]));
          break;
      }
      ++commands_applied_;
      log("applied command kind " + std::to_string(int(c.kind)) + " body " + std::to_string(c.body) + " " + when);
    } catch (const ParameterError& e) {
      log(std::string("rejected command: ") + e.what());
    }
  }

  void broadcast(const FrameRecord& f) {
    const auto msg = std::make_shared<const std::vector<std::uint8_t>>(encode_frame(f, opts_.decimate));
    std::lock_guard lock(clients_mutex_);
    for (auto& c : clients_) c->push(msg);
  }

  void sim_loop() {
    using clock = std::chrono::steady_clock;
    const auto period = std::chrono::duration_cast<clock::duration>(
        std::chrono::duration<double>(sim_.scene().hr_params.dt_hr));
    auto deadline = clock::now() + period;
    while (running_) {
      std::deque<InputCommand> pending;
      {
        std::lock_guard lock(cmd_mutex_);
        pending.swap(commands_);
      }
      for (const auto& c : pending) apply(c);

      if (!paused_) {
        try {
          broadcast(sim_.advance_frame(true));
          ++frames_emitted_;
        } catch (const SimulationError& e) {
          log(std::string("simulation error, pausing: ") + e.what());
          paused_ = true;
        }
      }
      if (opts_.paced || paused_) {
        std::unique_lock lock(cmd_mutex_);
        cmd_cv_.wait_until(lock, deadline, [&] { return !running_; });
        // Overruns emit late rather than skipping simulated time.
        deadline = std::max(deadline + period, clock::now());
      }
    }
  }

  Simulation sim_;
  ServerOptions opts_;
  std::string manifest_;
  std::vector<std::uint8_t> manifest_msg_;

  int listen_fd_ = -1;
  std::uint16_t port_ = 0;
  std::atomic<bool> running_{false};
  std::atomic<bool> paused_{false};
  std::atomic<std::uint64_t> frames_emitted_{0};
  std::atomic<std::uint64_t> commands_applied_{0};

  std::thread accept_thread_;
  std::thread sim_thread_;
  std::mutex threads_mutex_;
  std::vector<std::thread> conn_threads_;

  mutable std::mutex clients_mutex_;
  std::list<std::shared_ptr<Client>> clients_;

  std::mutex cmd_mutex_;
  std::condition_variable cmd_cv_;
  std::deque<InputCommand> commands_;
};

}  // namespace granular::live
