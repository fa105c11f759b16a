#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "w2bary/errors.hpp"
#include "w2bary/nn.hpp"

namespace w2bary {

namespace {

constexpr const char* kMagic = "w2bary-mlp";

void put_le(std::ostream& out, double value) {
  const auto bits = std::bit_cast<std::uint64_t>(value);
  char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((bits >> (8 * i)) & 0xFF);
  out.write(bytes, 8);
}

double get_le(std::istream& in) {
  unsigned char bytes[8];
  in.read(reinterpret_cast<char*>(bytes), 8);
  if (!in) throw IoError("checkpoint: truncated parameter block");
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  return std::bit_cast<double>(bits);
}

std::string expect_line(std::istream& in, const std::string& key) {
  std::string line;
  if (!std::getline(in, line)) throw IoError("checkpoint: missing '" + key + "' header line");
  if (line.rfind(key, 0) != 0) throw IoError("checkpoint: expected '" + key + "', got '" + line + "'");
  return line.substr(key.size());
}

}  // namespace

void write_checkpoint(std::ostream& out, const Mlp& net) {
  out << kMagic << "\n";
  out << "version " << kCheckpointVersion << "\n";
  out << "activation relu\n";
  out << "layers";
  for (auto s : net.layer_sizes()) out << " " << s;
  out << "\n";
  out << "parameters " << net.parameter_count() << "\n";
  for (Eigen::Index i = 0; i < net.parameter_count(); ++i) put_le(out, net.parameters()(i));
  if (!out) throw IoError("checkpoint: write failed");
}

Mlp read_checkpoint(std::istream& in) {
  std::string magic;
  if (!std::getline(in, magic) || magic != kMagic) throw IoError("checkpoint: not a w2bary network file");
  const int version = std::stoi(expect_line(in, "version "));
  if (version != kCheckpointVersion)
    throw IoError("checkpoint: unsupported format version " + std::to_string(version));
  const std::string activation = expect_line(in, "activation ");
  if (activation != "relu") throw IoError("checkpoint: unsupported activation '" + activation + "'");
  std::istringstream sizes_in(expect_line(in, "layers"));
  std::vector<Eigen::Index> sizes;
  for (Eigen::Index s; sizes_in >> s;) sizes.push_back(s);
  const auto count = static_cast<Eigen::Index>(std::stoll(expect_line(in, "parameters ")));
  Mlp net(sizes);
  if (count != net.parameter_count())
    throw IoError("checkpoint: parameter count does not match layer sizes");
  for (Eigen::Index i = 0; i < count; ++i) net.parameters()(i) = get_le(in);
  return net;
}

void save_checkpoint(const std::string& path, const Mlp& net) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  write_checkpoint(out, net);
}

Mlp load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  return read_checkpoint(in);
}

}  // namespace w2bary
