#pragma once

// Binary parameter records. All integers are little-endian u32, all
// parameters little-endian IEEE-754 f64, written in declaration order.
//
//   "FFF1" variant P D d_in d_out | w_in b_in w_out b_out
//   "DFF1" d_in d_hidden d_out    | w1 b1 w2 b2
//   "MOE1" d_in E k d_expert d_out | router, then per expert w1 b1 w2 b2
//   "TNS1" rows cols              | data

#include <cstdint>
#include <iosfwd>
#include <string>

#include "fff/block.hpp"

namespace fff::checkpoint {

void write_u32(std::ostream& out, std::uint32_t v);
std::uint32_t read_u32(std::istream& in);
void write_f64(std::ostream& out, double v);
double read_f64(std::istream& in);
void write_magic(std::ostream& out, const char (&magic)[5]);
std::string read_magic(std::istream& in);

void write_forest(std::ostream& out, const ForestParams& params);
ForestParams read_forest(std::istream& in);
void write_dense(std::ostream& out, const DenseFFParams& params);
DenseFFParams read_dense(std::istream& in);
void write_moe(std::ostream& out, const MoEParams& params);
MoEParams read_moe(std::istream& in);

/// Writes whichever record matches the block kind.
void write_block(std::ostream& out, const FeedForward& block);
/// Reads one FFF1/DFF1/MOE1 record.
FeedForward read_block(std::istream& in);

void write_tensor(std::ostream& out, const Matrix& m);
Matrix read_tensor(std::istream& in);

}  // namespace fff::checkpoint
