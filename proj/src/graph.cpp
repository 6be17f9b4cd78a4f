#include "fusenas/graph.hpp"

#include <cstring>
#include <fstream>

#include "fusenas/errors.hpp"

namespace fusenas {

namespace {

void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<char*>(b), 4);
}

void put_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<char*>(b), 8);
}

std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

std::uint64_t get_u64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

std::uint64_t f64_bits(double d) {
  std::uint64_t u;
  std::memcpy(&u, &d, 8);
  return u;
}

double bits_f64(std::uint64_t u) {
  double d;
  std::memcpy(&d, &u, 8);
  return d;
}

constexpr char kMagic[8] = {'F', 'N', 'C', 'K', 'P', 'T', '0', '1'};

}  // namespace

Tensor ComputeGraph::forward(const Tensor& x, bool training, DetRng& rng) {
  if (x.shape != input_shape)
    throw ValidationError("input", "shape " + Tensor::shape_str(x.shape) + " != declared " +
                                       Tensor::shape_str(input_shape));
  Tensor h = body.forward(x, training, rng);
  forward_called_ = true;
  return head->forward(h, training, rng);
}

Tensor ComputeGraph::embed(const Tensor& x) {
  DetRng rng(0);
  if (x.shape != input_shape)
    throw ValidationError("input", "shape " + Tensor::shape_str(x.shape) + " != declared " +
                                       Tensor::shape_str(input_shape));
  return body.forward(x, false, rng);
}

Tensor ComputeGraph::backward(const Tensor& logit_grad) {
  if (!forward_called_) throw StateError("backward called before forward");
  return body.backward(head->backward(logit_grad));
}

std::vector<Param*> ComputeGraph::params() {
  std::vector<Param*> out;
  body.collect_params(out);
  if (head) head->collect_params(out);
  return out;
}

void ComputeGraph::zero_grads() {
  for (Param* p : params()) p->grad.zero();
}

std::size_t ComputeGraph::param_count() {
  std::size_t n = 0;
  for (Param* p : params()) n += p->value.size();
  return n;
}

void ComputeGraph::init_params(DetRng& rng) {
  // Declaration order from one stream; the order is part of the determinism
  // contract.
  body.init_params(rng);
  if (head) head->init_params(rng);
}

std::uint64_t ComputeGraph::checksum() {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (Param* p : params()) {
    for (real x : p->value.v) {
      std::uint64_t u = f64_bits(static_cast<double>(x));
      for (int i = 0; i < 8; ++i) {
        h ^= (u >> (8 * i)) & 0xFF;
        h *= 0x100000001B3ULL;
      }
    }
  }
  return h;
}

void ComputeGraph::save_checkpoint(const std::string& path, const std::string& descriptor_hash,
                                   std::uint64_t seed) {
  std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw StateError("cannot open checkpoint for writing: " + tmp);
    os.write(kMagic, 8);
    put_u32(os, static_cast<std::uint32_t>(descriptor_hash.size()));
    os.write(descriptor_hash.data(), static_cast<std::streamsize>(descriptor_hash.size()));
    put_u64(os, seed);
    auto ps = params();
    put_u32(os, static_cast<std::uint32_t>(ps.size()));
    for (Param* p : ps) {
      put_u32(os, static_cast<std::uint32_t>(p->name.size()));
      os.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
      put_u32(os, static_cast<std::uint32_t>(p->value.shape.size()));
      for (auto d : p->value.shape) put_u64(os, d);
    }
    for (Param* p : ps)
      for (real x : p->value.v) put_u64(os, f64_bits(static_cast<double>(x)));
  }
  std::rename(tmp.c_str(), path.c_str());
}

std::string ComputeGraph::load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw StateError("cannot open checkpoint: " + path);
  char magic[8];
  is.read(magic, 8);
  if (std::memcmp(magic, kMagic, 8) != 0) throw StateError("bad checkpoint magic: " + path);
  std::uint32_t hlen = get_u32(is);
  std::string hash(hlen, '\0');
  is.read(hash.data(), hlen);
  get_u64(is);  // seed
  auto ps = params();
  std::uint32_t n = get_u32(is);
  if (n != ps.size()) throw StateError("checkpoint parameter count mismatch: " + path);
  for (Param* p : ps) {
    std::uint32_t nlen = get_u32(is);
    std::string name(nlen, '\0');
    is.read(name.data(), nlen);
    std::uint32_t rank = get_u32(is);
    std::vector<std::size_t> shape(rank);
    for (auto& d : shape) d = get_u64(is);
    if (shape != p->value.shape)
      throw StateError("checkpoint shape mismatch for " + p->name + " in " + path);
  }
  for (Param* p : ps)
    for (real& x : p->value.v) x = static_cast<real>(bits_f64(get_u64(is)));
  if (!is) throw StateError("truncated checkpoint: " + path);
  return hash;
}

}  // namespace fusenas
