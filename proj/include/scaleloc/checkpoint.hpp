#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <zlib.h>

#include "scaleloc/error.hpp"
#include "scaleloc/policy.hpp"
#include "scaleloc/proposal.hpp"

namespace scaleloc {

// Binary checkpoint, little-endian:
//   "SLCK" | u32 version | u32 kind length | kind bytes | u32 array count
//   per array: u32 name length | name | u32 rows | u32 cols | rows*cols float32 (row-major)
//   u32 CRC-32 of every preceding byte
inline constexpr char kCheckpointMagic[4] = {'S', 'L', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedArray {
  std::string name;
  std::uint32_t rows = 0;
  std::uint32_t cols = 0;
  std::vector<float> values;  // row-major
};

struct CheckpointFile {
  std::string kind;
  std::vector<NamedArray> arrays;
};

namespace detail {

class ByteWriter {
 public:
  template <class T>
  void put(T v) {
    const auto* p = reinterpret_cast<const char*>(&v);
    buf_.insert(buf_.end(), p, p + sizeof(T));
  }
  void put_bytes(const char* p, std::size_t n) { buf_.insert(buf_.end(), p, p + n); }
  void put_string(const std::string& s) {
    put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    put_bytes(s.data(), s.size());
  }
  const std::vector<char>& bytes() const { return buf_; }

 private:
  std::vector<char> buf_;
};

class ByteReader {
 public:
  ByteReader(const char* p, std::size_t n) : p_(p), n_(n) {}
  template <class T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, p_ + off_, sizeof(T));
    off_ += sizeof(T);
    return v;
  }
  std::string get_string() {
    const auto n = get<std::uint32_t>();
    need(n);
    std::string s(p_ + off_, n);
    off_ += n;
    return s;
  }
  void get_bytes(char* out, std::size_t n) {
    need(n);
    std::memcpy(out, p_ + off_, n);
    off_ += n;
  }
  bool done() const { return off_ == n_; }

 private:
  void need(std::size_t n) const {
    if (n_ - off_ < n) throw IntegrityError("checkpoint truncated");
  }
  const char* p_;
  std::size_t n_;
  std::size_t off_ = 0;
};

inline std::uint32_t crc32_of(const char* p, std::size_t n) {
  return static_cast<std::uint32_t>(::crc32(0L, reinterpret_cast<const Bytef*>(p), static_cast<uInt>(n)));
}

}  // namespace detail

inline std::vector<char> encode_checkpoint(const CheckpointFile& ck) {
  detail::ByteWriter w;
  w.put_bytes(kCheckpointMagic, 4);
  w.put<std::uint32_t>(kCheckpointVersion);
  w.put_string(ck.kind);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(ck.arrays.size()));
  for (const auto& a : ck.arrays) {
    w.put_string(a.name);
    w.put<std::uint32_t>(a.rows);
    w.put<std::uint32_t>(a.cols);
    w.put_bytes(reinterpret_cast<const char*>(a.values.data()), a.values.size() * sizeof(float));
  }
  std::vector<char> out = w.bytes();
  const std::uint32_t crc = detail::crc32_of(out.data(), out.size());
  const auto* c = reinterpret_cast<const char*>(&crc);
  out.insert(out.end(), c, c + 4);
  return out;
}

inline CheckpointFile decode_checkpoint(const std::vector<char>& bytes) {
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0)
    throw IntegrityError("not a checkpoint (bad magic)");
  const std::size_t body = bytes.size() - 4;
  std::uint32_t stored;
  std::memcpy(&stored, bytes.data() + body, 4);
  if (stored != detail::crc32_of(bytes.data(), body)) throw IntegrityError("checkpoint checksum mismatch");
  detail::ByteReader r(bytes.data() + 4, body - 4);
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw IntegrityError("unsupported checkpoint version " + std::to_string(version));
  CheckpointFile ck;
  ck.kind = r.get_string();
  const auto count = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedArray a;
    a.name = r.get_string();
    a.rows = r.get<std::uint32_t>();
    a.cols = r.get<std::uint32_t>();
    a.values.resize(static_cast<std::size_t>(a.rows) * a.cols);
    r.get_bytes(reinterpret_cast<char*>(a.values.data()), a.values.size() * sizeof(float));
    ck.arrays.push_back(std::move(a));
  }
  if (!r.done()) throw IntegrityError("trailing bytes in checkpoint");
  return ck;
}

inline void write_checkpoint(const std::string& path, const CheckpointFile& ck) {
  const auto bytes = encode_checkpoint(ck);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open checkpoint for writing: " + path);
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw IoError("write failed: " + path);
}

inline CheckpointFile read_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint: " + path);
  std::vector<char> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

inline NamedArray to_array(const std::string& name, const Eigen::MatrixXd& m) {
  NamedArray a{name, static_cast<std::uint32_t>(m.rows()), static_cast<std::uint32_t>(m.cols()), {}};
  a.values.reserve(static_cast<std::size_t>(m.size()));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) a.values.push_back(static_cast<float>(m(i, j)));
  return a;
}

inline void from_array(const NamedArray& a, Eigen::MatrixXd& m) {
  if (a.rows != m.rows() || a.cols != m.cols()) {
    std::ostringstream os;
    os << "checkpoint array '" << a.name << "' is " << a.rows << "x" << a.cols << ", expected " << m.rows() << "x"
       << m.cols();
    throw ShapeError(os.str());
  }
  std::size_t k = 0;
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = a.values[k++];
}

// Fills every expected (name, matrix) slot from the file; names and shapes
// must match exactly.
inline void fill_expected(const CheckpointFile& ck, const std::string& kind,
                          const std::vector<std::pair<std::string, Eigen::MatrixXd*>>& slots) {
  if (ck.kind != kind) throw ShapeError("checkpoint holds a '" + ck.kind + "', expected '" + kind + "'");
  if (ck.arrays.size() != slots.size()) {
    throw ShapeError("checkpoint has " + std::to_string(ck.arrays.size()) + " arrays, expected " +
                     std::to_string(slots.size()));
  }
  for (std::size_t i = 0; i < slots.size(); ++i) {
    if (ck.arrays[i].name != slots[i].first) {
      throw ShapeError("checkpoint array " + std::to_string(i) + " is '" + ck.arrays[i].name + "', expected '" +
                       slots[i].first + "'");
    }
    from_array(ck.arrays[i], *slots[i].second);
  }
}

// ---- policy ----

inline CheckpointFile policy_checkpoint(const PolicyParams& p) {
  CheckpointFile ck{"policy", {}};
  PolicyParams copy = p;
  for (const auto& [name, m] : copy.persistent()) ck.arrays.push_back(to_array(name, *m));
  return ck;
}

inline void save_checkpoint(const std::string& path, const PolicyParams& p) { write_checkpoint(path, policy_checkpoint(p)); }

// dims describe the expected layout; a checkpoint written under different
// dimensions or recurrence mode is rejected.
inline PolicyParams load_policy(const std::string& path, const PolicyDims& dims) {
  PolicyParams p = PolicyParams::zeros(dims);
  fill_expected(read_checkpoint(path), "policy", p.persistent());
  return p;
}

// ---- proposal model ----

namespace detail {

inline std::vector<std::pair<std::string, Eigen::MatrixXd*>> proposal_slots(ProposalModel& m,
                                                                            std::vector<Eigen::MatrixXd>& scratch) {
  std::vector<std::pair<std::string, Eigen::MatrixXd*>> out;
  scratch.clear();
  scratch.reserve(m.heads.size() * 6);
  for (auto& h : m.heads) {
    const std::string p = "head." + std::to_string(h.layer_id) + ".";
    scratch.push_back(h.in_mean);
    out.emplace_back(p + "in_mean", &scratch.back());
    scratch.push_back(h.in_scale);
    out.emplace_back(p + "in_scale", &scratch.back());
    if (h.hidden > 0) {
      out.emplace_back(p + "w1", &h.w1);
      scratch.push_back(h.b1);
      out.emplace_back(p + "b1", &scratch.back());
    }
    out.emplace_back(p + "w2", &h.w2);
    scratch.push_back(h.b2);
    out.emplace_back(p + "b2", &scratch.back());
  }
  return out;
}

}  // namespace detail

inline CheckpointFile proposal_checkpoint(const ProposalModel& model) {
  ProposalModel copy = model;
  std::vector<Eigen::MatrixXd> scratch;
  CheckpointFile ck{std::string("proposal/") + std::string(to_string(model.mode)), {}};
  for (const auto& [name, m] : detail::proposal_slots(copy, scratch)) ck.arrays.push_back(to_array(name, *m));
  return ck;
}

inline void save_checkpoint(const std::string& path, const ProposalModel& model) {
  write_checkpoint(path, proposal_checkpoint(model));
}

// skeleton supplies the configuration (pyramid, anchors, mode, hidden width);
// its parameters are replaced by the file's.
inline ProposalModel load_proposal_model(const CheckpointFile& ck, ProposalModel skeleton) {
  std::vector<Eigen::MatrixXd> scratch;
  const auto slots = detail::proposal_slots(skeleton, scratch);
  fill_expected(ck, std::string("proposal/") + std::string(to_string(skeleton.mode)), slots);
  std::size_t k = 0;
  for (auto& h : skeleton.heads) {
    h.in_mean = scratch[k++].col(0);
    h.in_scale = scratch[k++].col(0);
    if (h.hidden > 0) h.b1 = scratch[k++].col(0);
    h.b2 = scratch[k++].col(0);
  }
  return skeleton;
}

inline ProposalModel load_proposal_model(const std::string& path, ProposalModel skeleton) {
  return load_proposal_model(read_checkpoint(path), std::move(skeleton));
}

}  // namespace scaleloc
