#pragma once

// Model checkpoints.
//
// Binary file: "GNET" | u32 version (=1) | u32 network count, then per
// network u32 layer count and per layer u32 in, u32 out, u32 activation;
// then, network by network and layer by layer, the weight (in x out) and
// bias (1 x out) as GKDE tensors. A sidecar "<path>.meta" holds the
// plain-text `key = value` metadata record.

#include <filesystem>
#include <fstream>

#include "genkde/config.hpp"
#include "genkde/nn.hpp"
#include "genkde/tensor_io.hpp"

namespace genkde {

inline constexpr std::array<char, 4> kCheckpointMagic{'G', 'N', 'E', 'T'};

inline std::filesystem::path metadata_path(const std::filesystem::path& checkpoint) {
  auto p = checkpoint;
  p += ".meta";
  return p;
}

inline void write_networks(std::ostream& os, const std::vector<const Mlp*>& nets) {
  os.write(kCheckpointMagic.data(), 4);
  detail::put<std::uint32_t>(os, 1);
  detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(nets.size()));
  for (const auto* net : nets) {
    detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(net->depth()));
    for (const auto& L : net->layers()) {
      detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(L.weight.rows()));
      detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(L.weight.cols()));
      detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(L.activation));
    }
  }
  for (const auto* net : nets)
    for (const auto& L : net->layers()) {
      write_tensor(os, Matrix(L.weight));
      write_tensor(os, Matrix(L.bias));
    }
}

inline std::vector<Mlp> read_networks(std::istream& is) {
  std::array<char, 4> magic{};
  if (!is.read(magic.data(), 4) || magic != kCheckpointMagic) throw IoError("checkpoint: bad magic");
  if (detail::get<std::uint32_t>(is) != 1) throw IoError("checkpoint: unsupported version");
  const auto count = detail::get<std::uint32_t>(is);
  struct Shape {
    std::uint32_t in, out, act;
  };
  std::vector<std::vector<Shape>> shapes(count);
  for (auto& net : shapes) {
    const auto depth = detail::get<std::uint32_t>(is);
    for (std::uint32_t k = 0; k < depth; ++k) {
      Shape s{detail::get<std::uint32_t>(is), detail::get<std::uint32_t>(is), detail::get<std::uint32_t>(is)};
      if (s.act > static_cast<std::uint32_t>(Activation::sigmoid)) throw IoError("checkpoint: bad activation code");
      net.push_back(s);
    }
  }
  std::vector<Mlp> nets;
  for (const auto& net : shapes) {
    std::vector<Layer> layers;
    for (const auto& s : net) {
      const Matrix w = read_tensor(is);
      const Matrix b = read_tensor(is);
      if (w.rows() != s.in || w.cols() != s.out || b.rows() != 1 || b.cols() != s.out)
        throw IoError("checkpoint: tensor shape disagrees with header");
      layers.push_back({Eigen::MatrixXd(w), Eigen::RowVectorXd(b), static_cast<Activation>(s.act)});
    }
    nets.emplace_back(std::move(layers));
  }
  return nets;
}

struct Checkpoint {
  Autoencoder model;
  KeyValueConfig metadata;
};

inline void save_checkpoint(const std::filesystem::path& path, const Autoencoder& model, KeyValueConfig metadata) {
  metadata.set("format", "genkde-checkpoint-1");
  metadata.set("data_dim", std::to_string(model.data_dim()));
  metadata.set("latent_dim", std::to_string(model.latent_dim()));
  auto acts = [](const Mlp& net) {
    std::string s;
    for (const auto& L : net.layers()) s += (s.empty() ? "" : ",") + to_string(L.activation);
    return s;
  };
  metadata.set("encoder_activations", acts(model.encoder));
  metadata.set("decoder_activations", acts(model.decoder));
  write_atomically(path, [&](std::ostream& os) { write_networks(os, {&model.encoder, &model.decoder}); });
  write_atomically(metadata_path(path), [&](std::ostream& os) { os << metadata.to_string(); });
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  auto nets = read_networks(in);
  if (nets.size() != 2) throw IoError("checkpoint: expected an encoder and a decoder");
  Checkpoint ck{{std::move(nets[0]), std::move(nets[1])}, {}};
  if (ck.model.encoder.output_dim() != ck.model.decoder.input_dim() ||
      ck.model.decoder.output_dim() != ck.model.encoder.input_dim())
    throw IoError("checkpoint: encoder and decoder shapes disagree");
  std::ifstream meta(metadata_path(path));
  if (meta) ck.metadata = KeyValueConfig::parse(meta);
  return ck;
}

}  // namespace genkde
