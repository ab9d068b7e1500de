#include "fff/checkpoint.hpp"

#include <array>
#include <bit>
#include <istream>
#include <ostream>

#include "fff/error.hpp"

namespace fff::checkpoint {

namespace {

void write_data(std::ostream& out, const Matrix& m) {
  for (double v : m.values()) write_f64(out, v);
}

void read_data(std::istream& in, Matrix& m) {
  for (auto& v : m.values()) v = read_f64(in);
}

void expect_magic(std::istream& in, const std::string& want) {
  const std::string got = read_magic(in);
  if (got != want) throw FormatError("checkpoint: expected record '" + want + "', found '" + got + "'");
}

std::size_t read_dim(std::istream& in) { return static_cast<std::size_t>(read_u32(in)); }

}  // namespace

ForestParams read_forest_body(std::istream& in);
DenseFFParams read_dense_body(std::istream& in);
MoEParams read_moe_body(std::istream& in);

void write_u32(std::ostream& out, std::uint32_t v) {
  std::array<char, 4> b;
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  out.write(b.data(), 4);
}

std::uint32_t read_u32(std::istream& in) {
  std::array<unsigned char, 4> b;
  if (!in.read(reinterpret_cast<char*>(b.data()), 4)) throw FormatError("checkpoint: truncated");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

void write_f64(std::ostream& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  std::array<char, 8> b;
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((bits >> (8 * i)) & 0xFF);
  out.write(b.data(), 8);
}

double read_f64(std::istream& in) {
  std::array<unsigned char, 8> b;
  if (!in.read(reinterpret_cast<char*>(b.data()), 8)) throw FormatError("checkpoint: truncated");
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return std::bit_cast<double>(bits);
}

void write_magic(std::ostream& out, const char (&magic)[5]) { out.write(magic, 4); }

std::string read_magic(std::istream& in) {
  std::string m(4, '\0');
  if (!in.read(m.data(), 4)) throw FormatError("checkpoint: truncated record tag");
  return m;
}

void write_forest(std::ostream& out, const ForestParams& p) {
  write_magic(out, "FFF1");
  write_u32(out, static_cast<std::uint32_t>(p.variant));
  write_u32(out, static_cast<std::uint32_t>(p.trees));
  write_u32(out, static_cast<std::uint32_t>(p.depth));
  write_u32(out, static_cast<std::uint32_t>(p.d_in));
  write_u32(out, static_cast<std::uint32_t>(p.d_out));
  for (const Matrix* m : p.tensors()) write_data(out, *m);
}

ForestParams read_forest(std::istream& in) {
  expect_magic(in, "FFF1");
  return read_forest_body(in);
}

ForestParams read_forest_body(std::istream& in) {
  const std::uint32_t variant = read_u32(in);
  if (variant > 1) throw FormatError("checkpoint: unknown forest variant " + std::to_string(variant));
  const std::size_t trees = read_dim(in), depth = read_dim(in), d_in = read_dim(in),
                    d_out = read_dim(in);
  if (trees == 0 || d_in == 0 || d_out == 0 || depth > 30)
    throw FormatError("checkpoint: invalid forest header");
  ForestParams p = ForestParams::zeros(trees, depth, d_in, d_out, static_cast<Variant>(variant));
  for (Matrix* m : p.tensors()) read_data(in, *m);
  return p;
}

void write_dense(std::ostream& out, const DenseFFParams& p) {
  write_magic(out, "DFF1");
  write_u32(out, static_cast<std::uint32_t>(p.d_in()));
  write_u32(out, static_cast<std::uint32_t>(p.d_hidden()));
  write_u32(out, static_cast<std::uint32_t>(p.d_out()));
  for (const Matrix* m : p.tensors()) write_data(out, *m);
}

DenseFFParams read_dense(std::istream& in) {
  expect_magic(in, "DFF1");
  return read_dense_body(in);
}

DenseFFParams read_dense_body(std::istream& in) {
  const std::size_t d_in = read_dim(in), d_hidden = read_dim(in), d_out = read_dim(in);
  if (d_in == 0 || d_hidden == 0 || d_out == 0) throw FormatError("checkpoint: invalid dense header");
  DenseFFParams p = DenseFFParams::zeros(d_in, d_hidden, d_out);
  for (Matrix* m : p.tensors()) read_data(in, *m);
  return p;
}

void write_moe(std::ostream& out, const MoEParams& p) {
  write_magic(out, "MOE1");
  write_u32(out, static_cast<std::uint32_t>(p.d_in()));
  write_u32(out, static_cast<std::uint32_t>(p.num_experts()));
  write_u32(out, static_cast<std::uint32_t>(p.top_k));
  write_u32(out, static_cast<std::uint32_t>(p.d_expert()));
  write_u32(out, static_cast<std::uint32_t>(p.d_out()));
  for (const Matrix* m : p.tensors()) write_data(out, *m);
}

MoEParams read_moe(std::istream& in) {
  expect_magic(in, "MOE1");
  return read_moe_body(in);
}

MoEParams read_moe_body(std::istream& in) {
  const std::size_t d_in = read_dim(in), experts = read_dim(in), k = read_dim(in),
                    d_expert = read_dim(in), d_out = read_dim(in);
  if (d_in == 0 || experts == 0 || k == 0 || k > experts || d_expert == 0 || d_out == 0)
    throw FormatError("checkpoint: invalid moe header");
  MoEParams p;
  p.top_k = k;
  p.router = Matrix(d_in, experts);
  p.experts.assign(experts, DenseFFParams::zeros(d_in, d_expert, d_out));
  for (Matrix* m : p.tensors()) read_data(in, *m);
  return p;
}

void write_block(std::ostream& out, const FeedForward& block) {
  if (const auto* f = block.forest()) return write_forest(out, *f);
  if (const auto* d = block.dense()) return write_dense(out, *d);
  write_moe(out, *block.moe());
}

FeedForward read_block(std::istream& in) {
  const std::string tag = read_magic(in);
  if (tag == "FFF1") return FeedForward(read_forest_body(in));
  if (tag == "DFF1") return FeedForward(read_dense_body(in));
  if (tag == "MOE1") return FeedForward(read_moe_body(in));
  throw FormatError("checkpoint: unknown block record '" + tag + "'");
}

void write_tensor(std::ostream& out, const Matrix& m) {
  write_magic(out, "TNS1");
  write_u32(out, static_cast<std::uint32_t>(m.rows()));
  write_u32(out, static_cast<std::uint32_t>(m.cols()));
  write_data(out, m);
}

Matrix read_tensor(std::istream& in) {
  expect_magic(in, "TNS1");
  const std::size_t rows = read_dim(in), cols = read_dim(in);
  Matrix m(rows, cols);
  read_data(in, m);
  return m;
}

}  // namespace fff::checkpoint
