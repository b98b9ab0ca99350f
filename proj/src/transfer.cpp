#include "nestquant/transfer.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <fstream>
#include <random>

#include <json.hpp>

#include "nestquant/model_store.hpp"

namespace nestquant {

namespace {

constexpr std::uint64_t kMaxFrameBytes = 1ull << 30;

PushKind kind_of_opcode(Opcode op) {
  switch (op) {
    case Opcode::FullModel: return PushKind::Full;
    case Opcode::HighPayload: return PushKind::Part;
    case Opcode::LowPayload: return PushKind::LowDelta;
    default: throw TransferError("opcode is not a data frame");
  }
}

Opcode opcode_of_kind(PushKind kind) {
  switch (kind) {
    case PushKind::Full: return Opcode::FullModel;
    case PushKind::Part: return Opcode::HighPayload;
    case PushKind::LowDelta: return Opcode::LowPayload;
  }
  throw TransferError("bad push kind");
}

void write_all(int fd, const void* buf, std::size_t n) {
  const auto* p = static_cast<const std::uint8_t*>(buf);
  std::size_t sent = 0;
  while (sent < n) {
    const ssize_t rc = ::send(fd, p + sent, n - sent, MSG_NOSIGNAL);
    if (rc < 0) {
      if (errno == EINTR) continue;
      throw TransferError(std::string("send failed: ") + std::strerror(errno));
    }
    if (rc == 0) throw TransferError("connection closed by peer");
    sent += static_cast<std::size_t>(rc);
  }
}

void read_all(int fd, void* buf, std::size_t n) {
  auto* p = static_cast<std::uint8_t*>(buf);
  std::size_t got = 0;
  while (got < n) {
    const ssize_t rc = ::recv(fd, p + got, n - got, 0);
    if (rc < 0) {
      if (errno == EINTR) continue;
      throw TransferError(std::string("recv failed: ") + std::strerror(errno));
    }
    if (rc == 0) throw TransferError("connection closed by peer");
    got += static_cast<std::size_t>(rc);
  }
}

struct Frame {
  Opcode opcode;
  std::vector<std::uint8_t> payload;
  Index wire_bytes() const {
    return static_cast<Index>(kFrameHeaderBytes + payload.size());
  }
};

void write_frame(int fd, Opcode opcode, const void* payload, std::uint64_t len) {
  std::uint8_t header[kFrameHeaderBytes];
  std::memcpy(header, kFrameMagic, 4);
  header[4] = static_cast<std::uint8_t>(opcode);
  for (int i = 0; i < 8; ++i) header[5 + i] = static_cast<std::uint8_t>(len >> (8 * i));
  write_all(fd, header, sizeof(header));
  if (len) write_all(fd, payload, len);
}

Frame read_frame(int fd) {
  std::uint8_t header[kFrameHeaderBytes];
  read_all(fd, header, sizeof(header));
  if (std::memcmp(header, kFrameMagic, 4) != 0) throw TransferError("bad frame magic");
  const auto op = header[4];
  if (op < 0x01 || op > 0x06) throw TransferError("unknown opcode " + std::to_string(op));
  std::uint64_t len = 0;
  for (int i = 0; i < 8; ++i) len |= static_cast<std::uint64_t>(header[5 + i]) << (8 * i);
  if (len > kMaxFrameBytes) throw TransferError("frame exceeds the size cap");
  Frame f;
  f.opcode = static_cast<Opcode>(op);
  f.payload.resize(len);
  if (len) read_all(fd, f.payload.data(), len);
  return f;
}

class Socket {
 public:
  explicit Socket(int fd) : fd_(fd) {}
  ~Socket() {
    if (fd_ >= 0) ::close(fd_);
  }
  Socket(const Socket&) = delete;
  Socket& operator=(const Socket&) = delete;
  int fd() const { return fd_; }

 private:
  int fd_;
};

int connect_to(const std::string& host, int port) {
  const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd < 0) throw TransferError(std::string("socket failed: ") + std::strerror(errno));
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(static_cast<std::uint16_t>(port));
  if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
    ::close(fd);
    throw TransferError("cannot parse host address '" + host + "'");
  }
  if (::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
    const int err = errno;
    ::close(fd);
    throw TransferError("connect to " + host + ":" + std::to_string(port) +
                        " failed: " + std::strerror(err));
  }
  return fd;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  in.seekg(0, std::ios::end);
  const auto size = static_cast<std::streamoff>(in.tellg());
  in.seekg(0);
  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(size));
  in.read(reinterpret_cast<char*>(bytes.data()), size);
  if (!in) throw IoError("short read on '" + path.string() + "'");
  return bytes;
}

void check_model_name(const std::string& name) {
  if (name.empty() || name.size() > 200) throw TransferError("bad model name length");
  if (name.find('/') != std::string::npos || name.find('\\') != std::string::npos ||
      name.find("..") != std::string::npos)
    throw TransferError("model name must not form a path");
}

// Walks a high stream (container bytes with the low words removed) and
// returns how many low-payload bytes the full file would carry.
std::uint64_t high_stream_low_bytes(const std::vector<std::uint8_t>& bytes) {
  std::size_t pos = 0;
  auto need = [&](std::size_t n) {
    if (pos + n > bytes.size()) throw TransferError("truncated part-bit stream");
  };
  auto u64_at = [&]() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes[pos + i]) << (8 * i);
    pos += 8;
    return v;
  };

  need(12);
  if (std::memcmp(bytes.data(), kModelMagic, 4) != 0)
    throw TransferError("part-bit stream is not a model container");
  const std::uint32_t layer_count = static_cast<std::uint32_t>(bytes[8]) |
                                    static_cast<std::uint32_t>(bytes[9]) << 8 |
                                    static_cast<std::uint32_t>(bytes[10]) << 16 |
                                    static_cast<std::uint32_t>(bytes[11]) << 24;
  pos = 12;
  std::uint64_t low_total = 0;
  for (std::uint32_t l = 0; l < layer_count; ++l) {
    need(2);
    const std::size_t name_len = bytes[pos] | bytes[pos + 1] << 8;
    pos += 2 + name_len;
    need(1);
    const std::size_t rank = bytes[pos];
    pos += 1 + 4 * rank + 4;  // dims + scale
    const std::uint64_t high_len = u64_at();
    need(high_len);
    pos += high_len;
    low_total += u64_at();  // length field present, words absent
  }
  if (pos != bytes.size()) throw TransferError("trailing bytes in part-bit stream");
  return low_total;
}

// Write to a hidden temp file, run the validator on it, then rename into
// place. Nothing under the final name ever exists half-written or invalid.
template <typename Validator>
void persist_validated(const std::filesystem::path& dir, const std::string& filename,
                       const std::vector<std::uint8_t>& bytes, Validator validate) {
  std::random_device rd;
  const auto tmp = dir / ("." + filename + ".tmp" + std::to_string(rd()));
  try {
    {
      std::ofstream out(tmp, std::ios::binary);
      if (!out) throw IoError("cannot open temp file in '" + dir.string() + "'");
      out.write(reinterpret_cast<const char*>(bytes.data()),
                static_cast<std::streamsize>(bytes.size()));
      out.close();
      if (!out) throw IoError("temp write failed");
    }
    validate(tmp);
    std::error_code ec;
    std::filesystem::rename(tmp, dir / filename, ec);
    if (ec) throw IoError("rename failed: " + ec.message());
  } catch (...) {
    std::error_code ec;
    std::filesystem::remove(tmp, ec);
    throw;
  }
}

}  // namespace

PushKind parse_push_kind(const std::string& name) {
  if (name == "full") return PushKind::Full;
  if (name == "part") return PushKind::Part;
  if (name == "low-delta") return PushKind::LowDelta;
  throw ConfigError("unknown push kind '" + name + "' (expected full|part|low-delta)");
}

std::string push_kind_name(PushKind kind) {
  switch (kind) {
    case PushKind::Full: return "full";
    case PushKind::Part: return "part";
    case PushKind::LowDelta: return "low-delta";
  }
  return "?";
}

WireSplit split_container_for_wire(const std::filesystem::path& path) {
  const ContainerIndex index = scan_container(path);
  const std::vector<std::uint8_t> file = read_file_bytes(path);
  if (static_cast<Index>(file.size()) != index.file_bytes)
    throw IoError("container changed while splitting");

  WireSplit split;
  split.high_stream.reserve(file.size());
  split.low_stream.reserve(static_cast<std::size_t>(index.low_payload_bytes()));
  std::size_t pos = 0;
  for (const auto& layer : index.layers) {
    const auto low_begin = static_cast<std::size_t>(layer.low_offset);
    const auto low_end = low_begin + static_cast<std::size_t>(layer.low_bytes);
    split.high_stream.insert(split.high_stream.end(), file.begin() + pos,
                             file.begin() + low_begin);
    split.low_stream.insert(split.low_stream.end(), file.begin() + low_begin,
                            file.begin() + low_end);
    pos = low_end;
  }
  split.high_stream.insert(split.high_stream.end(), file.begin() + pos, file.end());
  return split;
}

std::vector<std::uint8_t> splice_container(const std::vector<std::uint8_t>& high_stream,
                                           const std::vector<std::uint8_t>& low_stream) {
  // Reuse the walker for validation, then interleave.
  const std::uint64_t expected_low = high_stream_low_bytes(high_stream);
  if (expected_low != low_stream.size())
    throw TransferError("low delta holds " + std::to_string(low_stream.size()) +
                        " bytes, part-bit stream expects " + std::to_string(expected_low));

  std::vector<std::uint8_t> full;
  full.reserve(high_stream.size() + low_stream.size());
  std::size_t pos = 0, low_pos = 0;
  auto u64_at = [&](std::size_t at) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(high_stream[at + i]) << (8 * i);
    return v;
  };

  const std::uint32_t layer_count = static_cast<std::uint32_t>(high_stream[8]) |
                                    static_cast<std::uint32_t>(high_stream[9]) << 8 |
                                    static_cast<std::uint32_t>(high_stream[10]) << 16 |
                                    static_cast<std::uint32_t>(high_stream[11]) << 24;
  std::size_t cursor = 12;
  for (std::uint32_t l = 0; l < layer_count; ++l) {
    const std::size_t name_len = high_stream[cursor] | high_stream[cursor + 1] << 8;
    cursor += 2 + name_len;
    const std::size_t rank = high_stream[cursor];
    cursor += 1 + 4 * rank + 4;
    const std::uint64_t high_len = u64_at(cursor);
    cursor += 8 + high_len;
    const std::uint64_t low_len = u64_at(cursor);
    cursor += 8;  // low words follow in the full file but not in this stream
    full.insert(full.end(), high_stream.begin() + pos, high_stream.begin() + cursor);
    full.insert(full.end(), low_stream.begin() + low_pos,
                low_stream.begin() + low_pos + low_len);
    pos = cursor;
    low_pos += low_len;
  }
  full.insert(full.end(), high_stream.begin() + pos, high_stream.end());
  return full;
}

PushResult push(const std::filesystem::path& model_path, const std::string& host, int port,
                PushKind kind) {
  std::vector<std::uint8_t> payload;
  switch (kind) {
    case PushKind::Full: payload = read_file_bytes(model_path); break;
    case PushKind::Part: payload = split_container_for_wire(model_path).high_stream; break;
    case PushKind::LowDelta: payload = split_container_for_wire(model_path).low_stream; break;
  }

  nlohmann::json manifest;
  manifest["model"] = model_path.stem().string();
  manifest["kind"] = push_kind_name(kind);
  const std::string manifest_text = manifest.dump();
  check_model_name(model_path.stem().string());

  Socket sock(connect_to(host, port));
  write_frame(sock.fd(), Opcode::Manifest, manifest_text.data(), manifest_text.size());
  write_frame(sock.fd(), opcode_of_kind(kind), payload.data(), payload.size());

  const Frame reply = read_frame(sock.fd());
  if (reply.opcode == Opcode::Error)
    throw TransferError("receiver rejected the push: " +
                        std::string(reply.payload.begin(), reply.payload.end()));
  if (reply.opcode != Opcode::Ack || reply.payload.size() != 8)
    throw TransferError("unexpected reply frame");
  std::uint64_t acked = 0;
  for (int i = 0; i < 8; ++i) acked |= static_cast<std::uint64_t>(reply.payload[i]) << (8 * i);

  PushResult result;
  result.bytes_sent = static_cast<Index>(kFrameHeaderBytes + payload.size());
  result.ack_bytes = static_cast<Index>(acked);
  return result;
}

TransferServer::TransferServer(const std::string& bind_host, int port,
                               std::filesystem::path store_dir)
    : store_dir_(std::move(store_dir)) {
  std::filesystem::create_directories(store_dir_);

  listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (listen_fd_ < 0) throw TransferError(std::string("socket failed: ") + std::strerror(errno));
  const int one = 1;
  ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));

  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(static_cast<std::uint16_t>(port));
  if (::inet_pton(AF_INET, bind_host.c_str(), &addr.sin_addr) != 1) {
    ::close(listen_fd_);
    throw TransferError("cannot parse bind address '" + bind_host + "'");
  }
  if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0 ||
      ::listen(listen_fd_, 8) != 0) {
    const int err = errno;
    ::close(listen_fd_);
    throw TransferError("cannot listen on " + bind_host + ":" + std::to_string(port) + ": " +
                        std::strerror(err));
  }
  socklen_t len = sizeof(addr);
  ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = ntohs(addr.sin_port);
}

TransferServer::~TransferServer() {
  stop();
  if (listen_fd_ >= 0) ::close(listen_fd_);
}

void TransferServer::run() {
  while (!stopping_.load()) {
    const int fd = ::accept(listen_fd_, nullptr, nullptr);
    if (fd < 0) {
      if (errno == EINTR) continue;
      break;  // listener closed by stop()
    }
    timeval tv{60, 0};
    ::setsockopt(fd, SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof(tv));
    handle_session(fd);
  }
}

void TransferServer::start() {
  thread_ = std::thread([this] { run(); });
}

void TransferServer::stop() {
  if (stopping_.exchange(true)) {
    if (thread_.joinable()) thread_.join();
    return;
  }
  if (listen_fd_ >= 0) ::shutdown(listen_fd_, SHUT_RDWR);
  if (thread_.joinable()) thread_.join();
}

void TransferServer::handle_session(int raw_fd) {
  Socket sock(raw_fd);
  try {
    const Frame manifest_frame = read_frame(sock.fd());
    if (manifest_frame.opcode != Opcode::Manifest)
      throw TransferError("session must open with a manifest frame");
    const auto manifest = nlohmann::json::parse(
        manifest_frame.payload.begin(), manifest_frame.payload.end(), nullptr, false);
    if (manifest.is_discarded()) throw TransferError("manifest is not valid JSON");
    const std::string name = manifest.value("model", "");
    const std::string kind_name = manifest.value("kind", "");
    check_model_name(name);
    const PushKind kind = parse_push_kind(kind_name);

    const Frame data = read_frame(sock.fd());
    if (kind_of_opcode(data.opcode) != kind)
      throw TransferError("data frame opcode disagrees with the manifest");

    switch (kind) {
      case PushKind::Full: {
        persist_validated(store_dir_, name + ".nqt", data.payload,
                          [](const std::filesystem::path& p) { load(p); });
        break;
      }
      case PushKind::Part: {
        high_stream_low_bytes(data.payload);  // structural validation
        persist_validated(store_dir_, name + ".nqthigh", data.payload,
                          [](const std::filesystem::path&) {});
        break;
      }
      case PushKind::LowDelta: {
        const auto base = store_dir_ / (name + ".nqthigh");
        if (!std::filesystem::exists(base))
          throw TransferError("receiver holds no part-bit model named '" + name + "'");
        const std::vector<std::uint8_t> high_stream = read_file_bytes(base);
        const std::vector<std::uint8_t> full = splice_container(high_stream, data.payload);
        persist_validated(store_dir_, name + ".nqt", full, [](const std::filesystem::path& p) {
          const NestedModel model = load(p);
          for (const auto& layer : model.layers)
            if (!layer.flat())
              recompose(unpack(layer.high), unpack(layer.low), layer.low_shift());
        });
        std::filesystem::remove(base);
        break;
      }
    }

    const std::uint64_t received = kFrameHeaderBytes + data.payload.size();
    std::uint8_t ack[8];
    for (int i = 0; i < 8; ++i) ack[i] = static_cast<std::uint8_t>(received >> (8 * i));
    write_frame(sock.fd(), Opcode::Ack, ack, sizeof(ack));
  } catch (const std::exception& e) {
    const std::string reason = e.what();
    try {
      write_frame(sock.fd(), Opcode::Error, reason.data(), reason.size());
    } catch (...) {
      // peer already gone
    }
  }
}

}  // namespace nestquant
