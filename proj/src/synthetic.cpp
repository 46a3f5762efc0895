#include "preempt/synthetic.hpp"

#include <fcntl.h>
#include <signal.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <random>
#include <system_error>
#include <vector>

#include "preempt/errors.hpp"

namespace preempt::synthetic {

namespace {

std::uint64_t splitmix64(std::uint64_t& state) noexcept {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

void write_all(int fd, const char* data, std::size_t n) {
  while (n > 0) {
    ssize_t rc = ::write(fd, data, n);
    if (rc < 0) {
      if (errno == EINTR) continue;
      throw std::system_error(errno, std::generic_category(), "write");
    }
    data += rc;
    n -= static_cast<std::size_t>(rc);
  }
}

// One write(2) per record keeps records atomic on the pipe, so nothing is
// left buffered in user space when a stop signal lands.
void emit(int fd, const char* fmt, auto... args) {
  char line[128];
  int n = std::snprintf(line, sizeof line, fmt, args...);
  write_all(fd, line, static_cast<std::size_t>(n));
}

int g_handler_fd = -1;

void on_tstp(int) {
  int saved = errno;
  struct sigaction dfl {};
  dfl.sa_handler = SIG_DFL;
  sigemptyset(&dfl.sa_mask);
  sigaction(SIGTSTP, &dfl, nullptr);
  sigset_t mask;
  sigemptyset(&mask);
  sigaddset(&mask, SIGTSTP);
  sigprocmask(SIG_UNBLOCK, &mask, nullptr);
  raise(SIGTSTP);
  // Continued: put the handler back for the next stop.
  struct sigaction again {};
  again.sa_handler = on_tstp;
  sigemptyset(&again.sa_mask);
  again.sa_flags = SA_RESTART;
  sigaction(SIGTSTP, &again, nullptr);
  errno = saved;
}

void on_cont(int) {
  int saved = errno;
  static const char kMsg[] = "RESUMED\n";
  if (g_handler_fd >= 0) {
    ssize_t rc = ::write(g_handler_fd, kMsg, sizeof kMsg - 1);
    (void)rc;
  }
  errno = saved;
}

class Ballast {
 public:
  Ballast(std::uint64_t bytes, std::uint64_t seed)
      : words_(bytes / sizeof(std::uint64_t)),
        data_(words_ ? new std::uint64_t[words_] : nullptr) {
    std::uint64_t state = seed;
    std::uint64_t sum = 0;
    for (std::size_t i = 0; i < words_; ++i) {
      data_[i] = splitmix64(state);
      sum = sum * 31 + data_[i];
    }
    checksum_ = sum;
  }

  bool verify() const noexcept {
    std::uint64_t sum = 0;
    for (std::size_t i = 0; i < words_; ++i) {
      sum = sum * 31 + static_cast<const volatile std::uint64_t&>(data_[i]);
    }
    return sum == checksum_;
  }

 private:
  std::size_t words_;
  std::unique_ptr<std::uint64_t[]> data_;
  std::uint64_t checksum_ = 0;
};

}  // namespace

std::uint32_t fnv1a(std::string_view bytes) noexcept {
  std::uint32_t h = 2166136261u;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 16777619u;
  }
  return h;
}

void generate_input(const std::filesystem::path& path,
                    std::uint64_t total_bytes, std::uint64_t tuple_bytes,
                    std::uint64_t seed) {
  if (tuple_bytes < kMinTupleBytes) {
    throw PreconditionViolation("tuple size must be at least " +
                                std::to_string(kMinTupleBytes) + " bytes");
  }
  if (total_bytes == 0 || total_bytes % tuple_bytes != 0) {
    throw PreconditionViolation("total size " + std::to_string(total_bytes) +
                                " is not a multiple of tuple size " +
                                std::to_string(tuple_bytes));
  }
  auto tmp = path;
  tmp += ".partial";
  std::FILE* f = std::fopen(tmp.c_str(), "wb");
  if (!f) throw std::system_error(errno, std::generic_category(), tmp.string());
  std::unique_ptr<std::FILE, int (*)(std::FILE*)> file(f, &std::fclose);

  std::mt19937_64 rng(seed);
  const std::size_t payload_bytes = tuple_bytes - kTupleHeaderBytes - 1;
  std::string tuple(tuple_bytes, '\0');
  const std::uint64_t count = total_bytes / tuple_bytes;
  try {
    for (std::uint64_t i = 0; i < count; ++i) {
      char* payload = tuple.data() + kTupleHeaderBytes;
      for (std::size_t k = 0; k < payload_bytes; k += 8) {
        std::uint64_t bits = rng();
        for (std::size_t b = 0; b < 8 && k + b < payload_bytes; ++b) {
          payload[k + b] = static_cast<char>('a' + (bits >> (8 * b) & 0xff) % 26);
        }
      }
      std::uint32_t sum = fnv1a(std::string_view(payload, payload_bytes));
      char header[32];
      std::snprintf(header, sizeof header, "#%010llu:%08x:",
                    static_cast<unsigned long long>(i), sum);
      std::memcpy(tuple.data(), header, kTupleHeaderBytes);
      tuple.back() = '\n';
      if (std::fwrite(tuple.data(), 1, tuple.size(), f) != tuple.size()) {
        throw std::system_error(errno, std::generic_category(), "write input");
      }
    }
    if (std::fflush(f) != 0 || ::fsync(::fileno(f)) != 0) {
      throw std::system_error(errno, std::generic_category(), "flush input");
    }
    file.reset();
    std::filesystem::rename(tmp, path);
  } catch (...) {
    file.reset();
    std::error_code ignored;
    std::filesystem::remove(tmp, ignored);
    throw;
  }
}

std::optional<std::string_view> parse_tuple(std::string_view tuple,
                                            std::uint64_t expected_index) noexcept {
  if (tuple.size() < kMinTupleBytes || tuple.front() != '#' ||
      tuple[11] != ':' || tuple[20] != ':' || tuple.back() != '\n') {
    return std::nullopt;
  }
  std::uint64_t index = 0;
  for (std::size_t i = 1; i <= 10; ++i) {
    char c = tuple[i];
    if (c < '0' || c > '9') return std::nullopt;
    index = index * 10 + static_cast<std::uint64_t>(c - '0');
  }
  if (index != expected_index) return std::nullopt;
  std::uint32_t sum = 0;
  for (std::size_t i = 12; i < 20; ++i) {
    char c = tuple[i];
    std::uint32_t v;
    if (c >= '0' && c <= '9') v = static_cast<std::uint32_t>(c - '0');
    else if (c >= 'a' && c <= 'f') v = static_cast<std::uint32_t>(c - 'a' + 10);
    else return std::nullopt;
    sum = sum << 4 | v;
  }
  auto payload = tuple.substr(kTupleHeaderBytes,
                              tuple.size() - kTupleHeaderBytes - 1);
  if (fnv1a(payload) != sum) return std::nullopt;
  return payload;
}

std::uint64_t tuple_work(std::string_view payload, std::uint32_t rounds) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::uint32_t r = 0; r < rounds; ++r) {
    h ^= r;
    for (unsigned char c : payload) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

RunResult run_task(const TaskConfig& config, int out_fd) {
  RunResult result;
  auto fail = [&](std::string why) {
    result.exit_code = 2;
    result.checksum_ok = false;
    result.error = std::move(why);
    return result;
  };
  if (config.tuple_bytes < kMinTupleBytes) return fail("tuple size too small");
  if (config.progress_interval == 0) return fail("progress interval must be > 0");

  int fd = ::open(config.input.c_str(), O_RDONLY | O_CLOEXEC);
  if (fd < 0) return fail("cannot open input " + config.input.string());
  struct Closer {
    int fd;
    ~Closer() { ::close(fd); }
  } closer{fd};
  off_t size = ::lseek(fd, 0, SEEK_END);
  ::lseek(fd, 0, SEEK_SET);
  if (size <= 0 || static_cast<std::uint64_t>(size) % config.tuple_bytes != 0) {
    return fail("input size is not a whole number of tuples");
  }
  const std::uint64_t total = static_cast<std::uint64_t>(size) / config.tuple_bytes;

  // Startup: allocate and dirty every ballast page.
  Ballast ballast(config.ballast_bytes, 0x5eed ^ config.ballast_bytes);

  const std::uint64_t batch = std::max<std::uint64_t>(1, (1u << 20) / config.tuple_bytes);
  std::vector<char> buf(batch * config.tuple_bytes);
  std::uint64_t done = 0;
  std::uint64_t chunk_digest = 0;
  std::uint64_t chunk_no = 0;
  while (done < total) {
    std::uint64_t want = std::min(batch, total - done) * config.tuple_bytes;
    std::uint64_t got = 0;
    while (got < want) {
      ssize_t rc = ::read(fd, buf.data() + got, want - got);
      if (rc < 0 && errno == EINTR) continue;
      if (rc <= 0) return fail("short read on input");
      got += static_cast<std::uint64_t>(rc);
    }
    for (std::uint64_t off = 0; off < want; off += config.tuple_bytes) {
      std::string_view tuple(buf.data() + off, config.tuple_bytes);
      auto payload = parse_tuple(tuple, done);
      if (!payload) {
        return fail("malformed tuple " + std::to_string(done));
      }
      chunk_digest ^= tuple_work(*payload, config.work_factor);
      ++done;
      if (done % config.progress_interval == 0 || done == total) {
        if (config.output_dir) {
          char name[48];
          std::snprintf(name, sizeof name, "chunk-%06llu.out",
                        static_cast<unsigned long long>(chunk_no));
          std::ofstream out(*config.output_dir / name);
          out << std::hex << chunk_digest << '\n';
        }
        ++chunk_no;
        chunk_digest = 0;
        emit(out_fd, "PROGRESS %.17g\n",
             static_cast<double>(done) / static_cast<double>(total));
      }
    }
  }

  result.tuples = done;
  if (config.verify_ballast) result.checksum_ok = ballast.verify();
  emit(out_fd, "SUMMARY tuples=%llu checksum=%s\n",
       static_cast<unsigned long long>(done), result.checksum_ok ? "ok" : "fail");
  if (!result.checksum_ok) {
    result.exit_code = 3;
    result.error = "ballast checksum mismatch";
  }
  return result;
}

void install_job_control_handlers(int out_fd) {
  g_handler_fd = out_fd;
  struct sigaction sa {};
  sigemptyset(&sa.sa_mask);
  sa.sa_flags = SA_RESTART;
  sa.sa_handler = on_tstp;
  sigaction(SIGTSTP, &sa, nullptr);
  sa.sa_handler = on_cont;
  sigaction(SIGCONT, &sa, nullptr);
}

double measure_work_cost(std::uint64_t tuple_bytes, std::uint64_t sample_tuples) {
  std::string payload(tuple_bytes - kTupleHeaderBytes - 1, 'q');
  constexpr std::uint32_t kRounds = 16;
  volatile std::uint64_t sink = 0;
  auto start = std::chrono::steady_clock::now();
  for (std::uint64_t i = 0; i < sample_tuples; ++i) {
    payload[i % payload.size()] = static_cast<char>('a' + i % 26);
    sink = sink ^ tuple_work(payload, kRounds);
  }
  std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - start;
  return elapsed.count() / double(sample_tuples) / kRounds;
}

std::uint32_t work_factor_for(double target_seconds, std::uint64_t tuples,
                              double cost_per_unit) {
  if (tuples == 0 || cost_per_unit <= 0.0) return 1;
  double w = target_seconds / (double(tuples) * cost_per_unit);
  return static_cast<std::uint32_t>(std::max(1.0, std::round(w)));
}

}  // namespace preempt::synthetic
