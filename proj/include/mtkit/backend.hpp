#pragma once

// Translation backends: the line protocol spoken with external translation
// servers, an in-process backend, and the toy cipher translator.
//
// Wire protocol (one JSON object per line, UTF-8, fields in this order):
//   request:  {"id":<u64>,"text":<string>,"mode":"greedy"|"beam"|"sample_topk","k":<u32>,"seed":<u64>}
//   response: {"id":<u64>,"text":<string>}  or  {"id":<u64>,"error":<string>}
// See docs/protocol.md for the full grammar.

#include <atomic>
#include <chrono>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "mtkit/decoder.hpp"

namespace mtkit::decoder {

enum class DecodeMode { greedy, beam, sample_topk };

std::string_view to_string(DecodeMode mode);
DecodeMode parse_mode(std::string_view name);

class ProtocolError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// The backend could not be reached at all; callers abort.
class BackendUnavailable : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TranslationRequest {
  std::uint64_t id = 0;
  std::string text;
  DecodeMode mode = DecodeMode::sample_topk;
  std::uint32_t k = 5;
  std::uint64_t seed = 0;  // per-sentence seed, already derived

  bool operator==(const TranslationRequest&) const = default;
};

struct TranslationResponse {
  std::uint64_t id = 0;
  std::optional<std::string> text;
  std::optional<std::string> error;

  bool operator==(const TranslationResponse&) const = default;
};

std::string format_request(const TranslationRequest& r);
std::string format_response(const TranslationResponse& r);
/// Both throw ProtocolError on anything but a well-formed record.
TranslationRequest parse_request(std::string_view line);
TranslationResponse parse_response(std::string_view line);

/// Text-level translator used by servers and the in-process backend.
class Translator {
 public:
  virtual ~Translator() = default;
  virtual std::string translate(const std::string& text, DecodeMode mode, std::uint32_t k,
                                std::uint64_t seed) const = 0;
  virtual std::string model_id() const = 0;
};

/// Character cipher over a fixed alphabet (sorted, whitespace excluded):
/// alphabet[i] -> alphabet[(i + shift) % n]. Whitespace and characters outside
/// the alphabet map to themselves. Decoding runs through ToyCipherModel, so
/// epsilon > 0 with sample_topk produces noisy output.
class ToyCipherTranslator : public Translator {
 public:
  struct Options {
    std::size_t shift = 1;
    double epsilon = 0.0;
    std::size_t copies = 1;  // output repeats the cipher text, space-separated
  };

  ToyCipherTranslator(std::u32string alphabet, Options options);
  /// Alphabet = every non-whitespace code point in `texts`.
  static ToyCipherTranslator from_texts(const std::vector<std::string>& texts, Options options);

  std::string translate(const std::string& text, DecodeMode mode, std::uint32_t k,
                        std::uint64_t seed) const override;
  std::string model_id() const override;

  /// Noise-free cipher and its inverse, computed directly (no decoding).
  std::string encipher(std::string_view text) const;
  std::string decipher(std::string_view text) const;

  const std::u32string& alphabet() const { return alphabet_; }
  const Options& options() const { return options_; }

 private:
  std::u32string alphabet_;
  Options options_;
};

enum class FailureKind { none, protocol, timeout, id_mismatch, server_error, transport };
std::string_view to_string(FailureKind kind);

struct TranslationResult {
  std::optional<std::string> text;
  FailureKind failure = FailureKind::none;
  std::string message;

  bool ok() const { return text.has_value(); }
};

/// Batch translation contract consumed by the backtranslation pipeline.
/// Sentence i of a batch starting at `first_index` is decoded with seed
/// stream_seed(global_seed, first_index + i), so results do not depend on
/// batching or parallelism.
class TranslationBackend {
 public:
  virtual ~TranslationBackend() = default;
  virtual std::vector<TranslationResult> translate_batch(const std::vector<std::string>& texts,
                                                         DecodeMode mode, std::uint32_t k,
                                                         std::uint64_t global_seed,
                                                         std::uint64_t first_index) = 0;
  virtual std::string id() const = 0;
};

class LocalBackend : public TranslationBackend {
 public:
  LocalBackend(std::shared_ptr<const Translator> translator, unsigned threads = 1);
  std::vector<TranslationResult> translate_batch(const std::vector<std::string>& texts,
                                                 DecodeMode mode, std::uint32_t k,
                                                 std::uint64_t global_seed,
                                                 std::uint64_t first_index) override;
  std::string id() const override;

 private:
  std::shared_ptr<const Translator> translator_;
  unsigned threads_;
};

struct ClientOptions {
  std::chrono::milliseconds timeout{30000};  // per request, from when it was sent
  std::size_t max_in_flight = 64;
};

/// Talks the line protocol to `endpoint`:
///   tcp://HOST:PORT   connect over TCP
///   exec:COMMAND      spawn `/bin/sh -c COMMAND` and use its stdin/stdout
class RemoteBackend : public TranslationBackend {
 public:
  explicit RemoteBackend(std::string endpoint, ClientOptions options = {});
  std::vector<TranslationResult> translate_batch(const std::vector<std::string>& texts,
                                                 DecodeMode mode, std::uint32_t k,
                                                 std::uint64_t global_seed,
                                                 std::uint64_t first_index) override;
  std::string id() const override { return endpoint_; }

 private:
  std::string endpoint_;
  ClientOptions options_;
};

/// One-shot form of RemoteBackend::translate_batch with first_index = 0.
std::vector<TranslationResult> backend_translate(const std::string& endpoint,
                                                 const std::vector<std::string>& texts,
                                                 DecodeMode mode, std::uint32_t k,
                                                 std::uint64_t seed, ClientOptions options = {});

/// Maps one request line to the response line for `translator`.
std::string handle_request_line(std::string_view line, const Translator& translator);

/// Serves the protocol on a pair of file descriptors until EOF on `in_fd`.
void serve_fd(int in_fd, int out_fd, const Translator& translator);

/// Minimal line server on 127.0.0.1. Each received line is passed to the
/// handler, whose returned lines are written back in order; returning
/// std::nullopt closes the connection. Connections are served one at a time
/// on a background thread until the server is destroyed.
class TcpLineServer {
 public:
  using Handler = std::function<std::optional<std::vector<std::string>>(const std::string&)>;

  TcpLineServer(std::uint16_t port, Handler handler);
  ~TcpLineServer();
  TcpLineServer(const TcpLineServer&) = delete;
  TcpLineServer& operator=(const TcpLineServer&) = delete;

  std::uint16_t port() const { return port_; }
  std::string endpoint() const { return "tcp://127.0.0.1:" + std::to_string(port_); }
  /// Blocks until stop() is called from elsewhere (used by the CLI).
  void wait();
  void stop();

 private:
  void run();

  int listen_fd_ = -1;
  std::uint16_t port_ = 0;
  Handler handler_;
  std::atomic<bool> stopping_{false};
  std::thread thread_;
};

}  // namespace mtkit::decoder
