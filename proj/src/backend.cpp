#include "mtkit/backend.hpp"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <poll.h>
#include <sys/socket.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <map>
#include <unordered_map>

#include "json.hpp"
#include "mtkit/checksum.hpp"
#include "mtkit/parallel.hpp"
#include "mtkit/rng.hpp"
#include "mtkit/text.hpp"

namespace mtkit::decoder {

using ordered_json = nlohmann::ordered_json;

std::string_view to_string(DecodeMode mode) {
  switch (mode) {
    case DecodeMode::greedy: return "greedy";
    case DecodeMode::beam: return "beam";
    case DecodeMode::sample_topk: return "sample_topk";
  }
  return "?";
}

DecodeMode parse_mode(std::string_view name) {
  if (name == "greedy") return DecodeMode::greedy;
  if (name == "beam") return DecodeMode::beam;
  if (name == "sample_topk") return DecodeMode::sample_topk;
  throw ProtocolError("unknown decode mode '" + std::string(name) + "'");
}

std::string_view to_string(FailureKind kind) {
  switch (kind) {
    case FailureKind::none: return "none";
    case FailureKind::protocol: return "protocol";
    case FailureKind::timeout: return "timeout";
    case FailureKind::id_mismatch: return "id_mismatch";
    case FailureKind::server_error: return "server_error";
    case FailureKind::transport: return "transport";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// Records

std::string format_request(const TranslationRequest& r) {
  ordered_json j;
  j["id"] = r.id;
  j["text"] = r.text;
  j["mode"] = to_string(r.mode);
  j["k"] = r.k;
  j["seed"] = r.seed;
  return j.dump();
}

std::string format_response(const TranslationResponse& r) {
  ordered_json j;
  j["id"] = r.id;
  if (r.error) {
    j["error"] = *r.error;
  } else {
    j["text"] = r.text.value_or("");
  }
  return j.dump();
}

namespace {

ordered_json parse_object(std::string_view line) {
  ordered_json j;
  try {
    j = ordered_json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw ProtocolError(std::string("not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ProtocolError("record is not a JSON object");
  return j;
}

void expect_keys(const ordered_json& j, std::initializer_list<std::string_view> keys) {
  if (j.size() != keys.size()) throw ProtocolError("unexpected number of fields");
  auto it = j.begin();
  for (auto k : keys) {
    if (it.key() != k) {
      throw ProtocolError("expected field '" + std::string(k) + "', found '" + it.key() + "'");
    }
    ++it;
  }
}

std::uint64_t get_u64(const ordered_json& j, const char* key) {
  const auto& v = j.at(key);
  if (!v.is_number_unsigned()) throw ProtocolError(std::string("field '") + key + "' must be an unsigned integer");
  return v.get<std::uint64_t>();
}

std::string get_string(const ordered_json& j, const char* key) {
  const auto& v = j.at(key);
  if (!v.is_string()) throw ProtocolError(std::string("field '") + key + "' must be a string");
  return v.get<std::string>();
}

}  // namespace

TranslationRequest parse_request(std::string_view line) {
  const auto j = parse_object(line);
  expect_keys(j, {"id", "text", "mode", "k", "seed"});
  TranslationRequest r;
  r.id = get_u64(j, "id");
  r.text = get_string(j, "text");
  r.mode = parse_mode(get_string(j, "mode"));
  const auto k = get_u64(j, "k");
  if (k > UINT32_MAX) throw ProtocolError("field 'k' out of range");
  r.k = static_cast<std::uint32_t>(k);
  r.seed = get_u64(j, "seed");
  return r;
}

TranslationResponse parse_response(std::string_view line) {
  const auto j = parse_object(line);
  if (j.size() != 2) throw ProtocolError("response must have exactly two fields");
  TranslationResponse r;
  if (std::next(j.begin()).key() == "error") {
    expect_keys(j, {"id", "error"});
    r.id = get_u64(j, "id");
    r.error = get_string(j, "error");
  } else {
    expect_keys(j, {"id", "text"});
    r.id = get_u64(j, "id");
    r.text = get_string(j, "text");
  }
  return r;
}

// ---------------------------------------------------------------------------
// Toy cipher translator

ToyCipherTranslator::ToyCipherTranslator(std::u32string alphabet, Options options)
    : alphabet_(std::move(alphabet)), options_(options) {
  std::sort(alphabet_.begin(), alphabet_.end());
  alphabet_.erase(std::unique(alphabet_.begin(), alphabet_.end()), alphabet_.end());
  std::erase_if(alphabet_, [](char32_t c) { return text::is_space(c); });
  if (!(options_.epsilon >= 0.0 && options_.epsilon < 1.0)) {
    throw DecoderError("epsilon must lie in [0, 1)");
  }
  if (options_.copies == 0) throw DecoderError("copies must be >= 1");
}

ToyCipherTranslator ToyCipherTranslator::from_texts(const std::vector<std::string>& texts,
                                                    Options options) {
  std::u32string alphabet;
  for (const auto& t : texts) {
    auto cps = text::decode(t);
    alphabet.append(cps);
    std::sort(alphabet.begin(), alphabet.end());
    alphabet.erase(std::unique(alphabet.begin(), alphabet.end()), alphabet.end());
  }
  return ToyCipherTranslator(std::move(alphabet), options);
}

std::string ToyCipherTranslator::encipher(std::string_view s) const {
  std::u32string out = text::decode(s);
  const std::size_t n = alphabet_.size();
  for (auto& c : out) {
    auto it = std::lower_bound(alphabet_.begin(), alphabet_.end(), c);
    if (it != alphabet_.end() && *it == c) {
      c = alphabet_[(static_cast<std::size_t>(it - alphabet_.begin()) + options_.shift) % n];
    }
  }
  std::string once = text::encode(out);
  std::string result = once;
  for (std::size_t i = 1; i < options_.copies; ++i) result += " " + once;
  return result;
}

std::string ToyCipherTranslator::decipher(std::string_view s) const {
  std::u32string out = text::decode(s);
  const std::size_t n = alphabet_.size();
  for (auto& c : out) {
    auto it = std::lower_bound(alphabet_.begin(), alphabet_.end(), c);
    if (it != alphabet_.end() && *it == c) {
      const auto i = static_cast<std::size_t>(it - alphabet_.begin());
      c = alphabet_[(i + n - options_.shift % n) % n];
    }
  }
  return text::encode(out);
}

std::string ToyCipherTranslator::translate(const std::string& s, DecodeMode mode, std::uint32_t k,
                                           std::uint64_t seed) const {
  // Token 0 is EOS, 1..n the alphabet, then any other characters of this text.
  const std::u32string cps = text::decode(s);
  const std::size_t n = alphabet_.size();
  std::vector<char32_t> symbols = {U'\0'};
  symbols.insert(symbols.end(), alphabet_.begin(), alphabet_.end());
  std::map<char32_t, TokenId> extra;
  auto id_of = [&](char32_t c) -> TokenId {
    auto it = std::lower_bound(alphabet_.begin(), alphabet_.end(), c);
    if (it != alphabet_.end() && *it == c) return static_cast<TokenId>(it - alphabet_.begin()) + 1;
    auto [e, inserted] = extra.emplace(c, static_cast<TokenId>(symbols.size()));
    if (inserted) symbols.push_back(c);
    return e->second;
  };
  std::vector<TokenId> src;
  src.reserve(cps.size());
  for (char32_t c : cps) src.push_back(id_of(c));
  const TokenId separator = id_of(U' ');
  if (symbols.size() < 2) symbols.push_back(U'\0');

  std::vector<TokenId> cipher(symbols.size());
  for (TokenId i = 0; i < cipher.size(); ++i) {
    cipher[i] = (i >= 1 && i <= n) ? static_cast<TokenId>((i - 1 + options_.shift) % n + 1) : i;
  }
  const ToyCipherModel model(std::move(cipher), symbols.size(), 0, options_.epsilon,
                             options_.copies, separator);
  const std::size_t max_len = src.size() * options_.copies + options_.copies + 16;

  Hypothesis h;
  switch (mode) {
    case DecodeMode::greedy: h = decode_greedy(model, src, max_len); break;
    case DecodeMode::beam: h = decode_beam(model, src, std::max<std::uint32_t>(k, 1), max_len).front(); break;
    case DecodeMode::sample_topk: h = decode_topk_sample(model, src, std::max<std::uint32_t>(k, 1), seed, max_len); break;
  }
  std::u32string out;
  for (TokenId t : h.tokens) {
    if (t != model.eos_id()) out.push_back(symbols[t]);
  }
  return text::encode(out);
}

std::string ToyCipherTranslator::model_id() const {
  return "toy-cipher(shift=" + std::to_string(options_.shift) +
         ",epsilon=" + std::to_string(options_.epsilon) +
         ",copies=" + std::to_string(options_.copies) + ",alphabet=" +
         sha256_hex(text::encode(alphabet_)).substr(0, 12) + ")";
}

// ---------------------------------------------------------------------------
// Local backend

LocalBackend::LocalBackend(std::shared_ptr<const Translator> translator, unsigned threads)
    : translator_(std::move(translator)), threads_(std::max(1u, threads)) {}

std::vector<TranslationResult> LocalBackend::translate_batch(const std::vector<std::string>& texts,
                                                             DecodeMode mode, std::uint32_t k,
                                                             std::uint64_t global_seed,
                                                             std::uint64_t first_index) {
  std::vector<TranslationResult> out(texts.size());
  parallel_shards(texts.size(), threads_, [&](std::size_t, std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      try {
        out[i].text = translator_->translate(texts[i], mode, k,
                                             stream_seed(global_seed, first_index + i));
      } catch (const std::exception& e) {
        out[i].failure = FailureKind::server_error;
        out[i].message = e.what();
      }
    }
  });
  return out;
}

std::string LocalBackend::id() const { return "local:" + translator_->model_id(); }

// ---------------------------------------------------------------------------
// Transport

namespace {

class Connection {
 public:
  explicit Connection(const std::string& endpoint) {
    if (endpoint.starts_with("tcp://")) {
      connect_tcp(endpoint.substr(6));
    } else if (endpoint.starts_with("exec:")) {
      spawn(endpoint.substr(5));
    } else {
      throw BackendUnavailable("unsupported endpoint '" + endpoint +
                               "' (expected tcp://HOST:PORT or exec:COMMAND)");
    }
  }

  ~Connection() {
    if (fd_ >= 0) {
      ::shutdown(fd_, SHUT_WR);
      ::close(fd_);
    }
    if (child_ > 0) {
      int status = 0;
      ::waitpid(child_, &status, 0);
    }
  }

  Connection(const Connection&) = delete;
  Connection& operator=(const Connection&) = delete;

  int fd() const { return fd_; }

  bool send_line(const std::string& line) {
    std::string buf = line + "\n";
    std::size_t off = 0;
    while (off < buf.size()) {
      const ssize_t n = ::send(fd_, buf.data() + off, buf.size() - off, MSG_NOSIGNAL);
      if (n < 0) {
        if (errno == EINTR) continue;
        return false;
      }
      off += static_cast<std::size_t>(n);
    }
    return true;
  }

 private:
  void connect_tcp(const std::string& hostport) {
    const auto colon = hostport.rfind(':');
    if (colon == std::string::npos) throw BackendUnavailable("tcp endpoint needs HOST:PORT");
    const std::string host = hostport.substr(0, colon);
    const std::string port = hostport.substr(colon + 1);
    addrinfo hints{};
    hints.ai_family = AF_UNSPEC;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo* res = nullptr;
    if (int rc = ::getaddrinfo(host.c_str(), port.c_str(), &hints, &res); rc != 0) {
      throw BackendUnavailable("cannot resolve " + hostport + ": " + ::gai_strerror(rc));
    }
    std::string last_error = "no addresses";
    for (addrinfo* ai = res; ai != nullptr; ai = ai->ai_next) {
      const int fd = ::socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol);
      if (fd < 0) continue;
      if (::connect(fd, ai->ai_addr, ai->ai_addrlen) == 0) {
        fd_ = fd;
        break;
      }
      last_error = std::strerror(errno);
      ::close(fd);
    }
    ::freeaddrinfo(res);
    if (fd_ < 0) throw BackendUnavailable("cannot connect to " + hostport + ": " + last_error);
  }

  void spawn(const std::string& command) {
    int sv[2];
    if (::socketpair(AF_UNIX, SOCK_STREAM, 0, sv) != 0) {
      throw BackendUnavailable(std::string("socketpair failed: ") + std::strerror(errno));
    }
    const pid_t pid = ::fork();
    if (pid < 0) {
      ::close(sv[0]);
      ::close(sv[1]);
      throw BackendUnavailable(std::string("fork failed: ") + std::strerror(errno));
    }
    if (pid == 0) {
      ::dup2(sv[1], STDIN_FILENO);
      ::dup2(sv[1], STDOUT_FILENO);
      ::close(sv[0]);
      ::close(sv[1]);
      ::execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
      ::_exit(127);
    }
    ::close(sv[1]);
    fd_ = sv[0];
    child_ = pid;
  }

  int fd_ = -1;
  pid_t child_ = -1;
};

std::optional<std::uint64_t> recover_id(std::string_view line) {
  try {
    auto j = nlohmann::json::parse(line);
    if (j.is_object() && j.contains("id") && j["id"].is_number_unsigned()) {
      return j["id"].get<std::uint64_t>();
    }
  } catch (const std::exception&) {
  }
  return std::nullopt;
}

}  // namespace

RemoteBackend::RemoteBackend(std::string endpoint, ClientOptions options)
    : endpoint_(std::move(endpoint)), options_(options) {
  if (options_.max_in_flight == 0) options_.max_in_flight = 1;
}

std::vector<TranslationResult> RemoteBackend::translate_batch(const std::vector<std::string>& texts,
                                                              DecodeMode mode, std::uint32_t k,
                                                              std::uint64_t global_seed,
                                                              std::uint64_t first_index) {
  using Clock = std::chrono::steady_clock;
  const std::size_t n = texts.size();
  std::vector<TranslationResult> results(n);
  if (n == 0) return results;

  Connection conn(endpoint_);
  std::vector<bool> resolved(n, false);
  std::size_t n_resolved = 0;
  std::map<std::size_t, Clock::time_point> in_flight;  // index -> send time
  std::size_t next_send = 0;
  std::size_t lines_received = 0;
  std::optional<std::pair<FailureKind, std::string>> stream_error;
  std::string buffer;
  bool eof = false;

  auto resolve = [&](std::size_t i, TranslationResult r) {
    if (!resolved[i]) {
      resolved[i] = true;
      ++n_resolved;
    }
    in_flight.erase(i);
    results[i] = std::move(r);
  };
  auto fail = [&](std::size_t i, FailureKind kind, std::string msg) {
    TranslationResult r;
    r.failure = kind;
    r.message = std::move(msg);
    resolve(i, std::move(r));
  };

  auto handle_line = [&](std::string_view line) {
    ++lines_received;
    const std::string where = "response line " + std::to_string(lines_received);
    TranslationResponse resp;
    try {
      resp = parse_response(line);
    } catch (const ProtocolError& e) {
      if (auto id = recover_id(line); id && *id >= first_index && *id - first_index < next_send) {
        fail(static_cast<std::size_t>(*id - first_index), FailureKind::protocol,
             where + ": " + e.what());
      } else {
        // No usable id: the stream can no longer be trusted for the pending requests.
        if (!stream_error) stream_error = {FailureKind::protocol, where + ": " + e.what()};
        std::vector<std::size_t> pending;
        for (const auto& [i, sent] : in_flight) pending.push_back(i);
        for (auto i : pending) fail(i, FailureKind::protocol, where + ": " + e.what());
      }
      return;
    }
    if (resp.id < first_index || resp.id - first_index >= next_send) {
      if (!stream_error) {
        stream_error = {FailureKind::id_mismatch,
                        where + ": unknown id " + std::to_string(resp.id)};
      }
      return;
    }
    const auto i = static_cast<std::size_t>(resp.id - first_index);
    if (resolved[i]) {
      // Late answers to timed-out requests are dropped; a second answer is a mismatch.
      if (results[i].failure != FailureKind::timeout) {
        fail(i, FailureKind::id_mismatch, where + ": duplicate response for id " + std::to_string(resp.id));
      }
      return;
    }
    TranslationResult r;
    if (resp.error) {
      r.failure = FailureKind::server_error;
      r.message = *resp.error;
    } else {
      r.text = std::move(resp.text);
    }
    resolve(i, std::move(r));
  };

  while (n_resolved < n && !eof) {
    while (next_send < n && in_flight.size() < options_.max_in_flight) {
      TranslationRequest req{first_index + next_send, texts[next_send], mode, k,
                             stream_seed(global_seed, first_index + next_send)};
      if (!conn.send_line(format_request(req))) {
        if (lines_received == 0 && n_resolved == 0) {
          throw BackendUnavailable("backend " + endpoint_ + " closed the connection");
        }
        eof = true;
        break;
      }
      in_flight[next_send] = Clock::now();
      ++next_send;
    }
    if (eof) break;

    auto now = Clock::now();
    auto wait = options_.timeout;
    for (const auto& [i, sent] : in_flight) {
      auto left = std::chrono::duration_cast<std::chrono::milliseconds>(sent + options_.timeout - now);
      wait = std::min(wait, std::max(left, std::chrono::milliseconds(0)));
    }
    pollfd pfd{conn.fd(), POLLIN, 0};
    const int rc = ::poll(&pfd, 1, static_cast<int>(wait.count()));
    if (rc < 0 && errno != EINTR) throw BackendUnavailable(std::string("poll failed: ") + std::strerror(errno));
    if (rc > 0) {
      char chunk[1 << 14];
      const ssize_t got = ::recv(conn.fd(), chunk, sizeof chunk, 0);
      if (got <= 0) {
        eof = true;
        if (!buffer.empty()) {
          handle_line(text::trim_cr(buffer));
          buffer.clear();
        }
      } else {
        buffer.append(chunk, static_cast<std::size_t>(got));
        std::size_t start = 0;
        for (std::size_t nl; (nl = buffer.find('\n', start)) != std::string::npos; start = nl + 1) {
          handle_line(text::trim_cr(std::string_view(buffer).substr(start, nl - start)));
        }
        buffer.erase(0, start);
      }
    }
    now = Clock::now();
    std::vector<std::size_t> expired;
    for (const auto& [i, sent] : in_flight) {
      if (now - sent >= options_.timeout) expired.push_back(i);
    }
    for (auto i : expired) {
      fail(i, FailureKind::timeout,
           "no response within " + std::to_string(options_.timeout.count()) + " ms");
    }
  }

  if (n_resolved < n) {
    if (lines_received == 0 && n_resolved == 0) {
      throw BackendUnavailable("backend " + endpoint_ + " closed the connection without answering");
    }
    for (std::size_t i = 0; i < n; ++i) {
      if (resolved[i]) continue;
      if (stream_error) {
        fail(i, stream_error->first, stream_error->second);
      } else {
        fail(i, FailureKind::transport, "connection closed before a response arrived");
      }
    }
  }
  return results;
}

std::vector<TranslationResult> backend_translate(const std::string& endpoint,
                                                 const std::vector<std::string>& texts,
                                                 DecodeMode mode, std::uint32_t k,
                                                 std::uint64_t seed, ClientOptions options) {
  RemoteBackend backend(endpoint, options);
  return backend.translate_batch(texts, mode, k, seed, 0);
}

// ---------------------------------------------------------------------------
// Server side

std::string handle_request_line(std::string_view line, const Translator& translator) {
  TranslationRequest req;
  try {
    req = parse_request(line);
  } catch (const ProtocolError& e) {
    return format_response({recover_id(line).value_or(0), std::nullopt,
                            std::string("bad request: ") + e.what()});
  }
  try {
    return format_response({req.id, translator.translate(req.text, req.mode, req.k, req.seed), std::nullopt});
  } catch (const std::exception& e) {
    return format_response({req.id, std::nullopt, e.what()});
  }
}

namespace {

bool write_all(int fd, std::string_view data) {
  while (!data.empty()) {
    const ssize_t n = ::send(fd, data.data(), data.size(), MSG_NOSIGNAL);
    if (n < 0 && errno == ENOTSOCK) {
      const ssize_t w = ::write(fd, data.data(), data.size());
      if (w < 0) {
        if (errno == EINTR) continue;
        return false;
      }
      data.remove_prefix(static_cast<std::size_t>(w));
      continue;
    }
    if (n < 0) {
      if (errno == EINTR) continue;
      return false;
    }
    data.remove_prefix(static_cast<std::size_t>(n));
  }
  return true;
}

}  // namespace

void serve_fd(int in_fd, int out_fd, const Translator& translator) {
  std::string buffer;
  char chunk[1 << 14];
  for (;;) {
    const ssize_t got = ::read(in_fd, chunk, sizeof chunk);
    if (got < 0 && errno == EINTR) continue;
    if (got <= 0) break;
    buffer.append(chunk, static_cast<std::size_t>(got));
    std::size_t start = 0;
    for (std::size_t nl; (nl = buffer.find('\n', start)) != std::string::npos; start = nl + 1) {
      auto line = text::trim_cr(std::string_view(buffer).substr(start, nl - start));
      if (line.empty()) continue;
      if (!write_all(out_fd, handle_request_line(line, translator) + "\n")) return;
    }
    buffer.erase(0, start);
  }
  if (!buffer.empty()) write_all(out_fd, handle_request_line(text::trim_cr(buffer), translator) + "\n");
}

TcpLineServer::TcpLineServer(std::uint16_t port, Handler handler) : handler_(std::move(handler)) {
  listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (listen_fd_ < 0) throw BackendUnavailable(std::string("socket: ") + std::strerror(errno));
  int one = 1;
  ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  addr.sin_port = htons(port);
  if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0 ||
      ::listen(listen_fd_, 8) != 0) {
    const std::string err = std::strerror(errno);
    ::close(listen_fd_);
    throw BackendUnavailable("cannot listen on port " + std::to_string(port) + ": " + err);
  }
  socklen_t len = sizeof addr;
  ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = ntohs(addr.sin_port);
  thread_ = std::thread([this] { run(); });
}

TcpLineServer::~TcpLineServer() {
  stop();
  if (thread_.joinable()) thread_.join();
  ::close(listen_fd_);
}

void TcpLineServer::stop() { stopping_ = true; }

void TcpLineServer::wait() {
  if (thread_.joinable()) thread_.join();
}

void TcpLineServer::run() {
  while (!stopping_) {
    pollfd pfd{listen_fd_, POLLIN, 0};
    if (::poll(&pfd, 1, 50) <= 0) continue;
    const int conn = ::accept(listen_fd_, nullptr, nullptr);
    if (conn < 0) continue;
    std::string buffer;
    bool open = true;
    while (open && !stopping_) {
      pollfd cfd{conn, POLLIN, 0};
      if (::poll(&cfd, 1, 50) <= 0) continue;
      char chunk[1 << 14];
      const ssize_t got = ::recv(conn, chunk, sizeof chunk, 0);
      if (got <= 0) break;
      buffer.append(chunk, static_cast<std::size_t>(got));
      std::size_t start = 0;
      for (std::size_t nl; open && (nl = buffer.find('\n', start)) != std::string::npos;
           start = nl + 1) {
        auto replies = handler_(std::string(text::trim_cr(std::string_view(buffer).substr(start, nl - start))));
        if (!replies) {
          open = false;
          break;
        }
        for (const auto& r : *replies) {
          if (!write_all(conn, r + "\n")) open = false;
        }
      }
      if (open) buffer.erase(0, start);
    }
    ::shutdown(conn, SHUT_RDWR);
    ::close(conn);
  }
}

}  // namespace mtkit::decoder
