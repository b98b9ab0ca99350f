#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <string>
#include <thread>
#include <vector>

#include "nestquant/tensor.hpp"

namespace nestquant {

// Wire contract: length-prefixed frames over a plain TCP stream.
//   magic "NQTX" | u8 opcode | u64 length (little-endian) | payload
// A push session is one MANIFEST control frame (JSON: model name + kind)
// followed by exactly one data frame, answered by ACK (u64 received data
// bytes) or ERROR (reason text). Traffic accounting on both ends covers the
// data frame only, header included, so splitting a model into a part push
// plus a low-delta push costs exactly one extra frame header over pushing it
// whole. No TLS, no multiplexing; sessions are sequential.
inline constexpr char kFrameMagic[4] = {'N', 'Q', 'T', 'X'};
inline constexpr std::size_t kFrameHeaderBytes = 13;

enum class Opcode : std::uint8_t {
  Manifest = 0x01,
  HighPayload = 0x02,
  LowPayload = 0x03,
  FullModel = 0x04,
  Ack = 0x05,
  Error = 0x06,
};

enum class PushKind { Full, Part, LowDelta };

PushKind parse_push_kind(const std::string& name);
std::string push_kind_name(PushKind kind);

struct PushResult {
  Index bytes_sent = 0;  // data frame bytes, header included
  Index ack_bytes = 0;   // receiver's count, must match
};

PushResult push(const std::filesystem::path& model_path, const std::string& host, int port,
                PushKind kind);

// Byte split of a container for the wire: the high stream is the file with
// every low-payload word removed (length fields stay), the low stream is the
// removed words in layer order. Splicing the two restores the file exactly.
struct WireSplit {
  std::vector<std::uint8_t> high_stream;
  std::vector<std::uint8_t> low_stream;
};

WireSplit split_container_for_wire(const std::filesystem::path& path);
std::vector<std::uint8_t> splice_container(const std::vector<std::uint8_t>& high_stream,
                                           const std::vector<std::uint8_t>& low_stream);

// Receiving side. Persists models under store_dir with write-then-rename so a
// failed session leaves the directory untouched. run() blocks until stop().
class TransferServer {
 public:
  TransferServer(const std::string& bind_host, int port, std::filesystem::path store_dir);
  ~TransferServer();

  TransferServer(const TransferServer&) = delete;
  TransferServer& operator=(const TransferServer&) = delete;

  int port() const { return port_; }
  void run();
  void start();  // run() on a background thread
  void stop();

 private:
  void handle_session(int fd);

  std::filesystem::path store_dir_;
  int listen_fd_ = -1;
  int port_ = 0;
  std::atomic<bool> stopping_{false};
  std::thread thread_;
};

}  // namespace nestquant
