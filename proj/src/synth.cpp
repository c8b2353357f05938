#include "pmil/synth.hpp"

#include <algorithm>
#include <cmath>

#include "pmil/errors.hpp"
#include "pmil/rng.hpp"
#include "pmil/vit.hpp"

namespace pmil {

void GenSpec::validate() const {
  if (num_classes < 2) throw ConfigError("gen spec: num_classes must be >= 2");
  if (n_min < 1 || n_max < n_min)
    throw ConfigError("gen spec: need 1 <= n_min <= n_max");
  if (image_size < 2 || channels < 1)
    throw ConfigError("gen spec: bad image dimensions");
  auto sized = [&](const std::vector<double>& v, const char* what) {
    if (static_cast<int>(v.size()) != num_classes)
      throw ConfigError(std::string("gen spec: ") + what + " needs one entry per class");
  };
  sized(witness_rate, "witness_rate");
  sized(tex_freq, "tex_freq");
  sized(tex_angle, "tex_angle");
  for (double r : witness_rate)
    if (r < 0.0 || r > 1.0) throw ConfigError("gen spec: witness_rate outside [0, 1]");
  if (label_rule == LabelRule::PresenceOR) {
    for (int c = 1; c < num_classes; ++c)
      if (witness_rate[static_cast<std::size_t>(c)] <= 0.0)
        throw ConfigError("gen spec: presence-or requires witness_rate > 0 for class " +
                          std::to_string(c));
  }
  if (noise_level < 0.0 || tex_amplitude < 0.0 || phase_jitter < 0.0)
    throw ConfigError("gen spec: negative noise/amplitude/jitter");
}

Tensor Bag::instance(int i, DType dtype) const {
  if (i < 0 || i >= n) throw DataError("bag: instance index out of range");
  Tensor img = Tensor::zeros({height, width, channels}, dtype);
  const std::int64_t base = static_cast<std::int64_t>(i) * instance_elems();
  for (std::int64_t k = 0; k < instance_elems(); ++k)
    img.set_value_at(k, static_cast<double>(data[static_cast<std::size_t>(base + k)]));
  img.set_persistent(true);
  return img;
}

std::vector<Tensor> Bag::instance_patches(int patch_size, DType dtype) const {
  std::vector<Tensor> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) out.push_back(patchify(instance(i, dtype), patch_size));
  return out;
}

namespace {

void paint_instance(std::vector<float>& data, std::int64_t base, const GenSpec& spec,
                    int witness_class, Rng& rng) {
  const int S = spec.image_size, C = spec.channels;
  std::normal_distribution<double> noise(0.0, spec.noise_level);
  std::uniform_real_distribution<double> jitter(-1.0, 1.0);

  const bool witness = witness_class >= 0;
  double freq = 0, ca = 0, sa = 0, phase = 0;
  if (witness) {
    freq = spec.tex_freq[static_cast<std::size_t>(witness_class)];
    const double angle = spec.tex_angle[static_cast<std::size_t>(witness_class)];
    ca = std::cos(angle);
    sa = std::sin(angle);
    phase = jitter(rng) * spec.phase_jitter * 1.5707963267948966;
  }

  const double two_pi = 6.283185307179586;
  for (int y = 0; y < S; ++y) {
    for (int x = 0; x < S; ++x) {
      double v = 0.5;
      if (witness) {
        const double t = (x * ca + y * sa) / static_cast<double>(S);
        v += 0.5 * spec.tex_amplitude * std::sin(two_pi * freq * t + phase);
      }
      for (int c = 0; c < C; ++c) {
        const double px = std::clamp(v + noise(rng), 0.0, 1.0);
        data[static_cast<std::size_t>(base + (static_cast<std::int64_t>(y) * S + x) * C + c)] =
            static_cast<float>(px);
      }
    }
  }
}

Bag generate_bag(const GenSpec& spec, int label, std::uint64_t bag_id, Rng& rng) {
  Bag bag;
  bag.height = spec.image_size;
  bag.width = spec.image_size;
  bag.channels = spec.channels;
  bag.label = label;
  bag.bag_id = bag_id;

  std::uniform_int_distribution<int> n_dist(spec.n_min, spec.n_max);
  bag.n = n_dist(rng);
  bag.latents.assign(static_cast<std::size_t>(bag.n), -1);

  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double rate = spec.witness_rate[static_cast<std::size_t>(label)];

  if (spec.label_rule == LabelRule::PresenceOR) {
    bool any = false;
    for (int i = 0; i < bag.n; ++i) {
      if (u(rng) < rate) {
        bag.latents[static_cast<std::size_t>(i)] = label;
        any = true;
      }
    }
    // a positive bag must contain its witness
    if (!any && rate > 0.0) bag.latents[0] = label;
  } else {
    // bag-class witnesses plus weaker distractors from other classes
    for (int i = 0; i < bag.n; ++i) {
      const double r = u(rng);
      if (r < rate) {
        bag.latents[static_cast<std::size_t>(i)] = label;
      } else if (r < 1.5 * rate && spec.num_classes > 1) {
        int other = static_cast<int>(rng() % static_cast<std::uint64_t>(spec.num_classes - 1));
        if (other >= label) ++other;
        bag.latents[static_cast<std::size_t>(i)] = other;
      }
    }
    // enforce strict plurality of the bag class
    auto votes = [&](int c) {
      return std::count(bag.latents.begin(), bag.latents.end(), c);
    };
    for (int i = 0; i < bag.n; ++i) {
      bool lead = true;
      for (int c = 0; c < spec.num_classes && lead; ++c)
        if (c != label && votes(c) >= votes(label)) lead = false;
      if (lead) break;
      if (bag.latents[static_cast<std::size_t>(i)] != label)
        bag.latents[static_cast<std::size_t>(i)] = label;
    }
  }

  bag.data.assign(static_cast<std::size_t>(bag.n) * bag.instance_elems(), 0.0f);
  for (int i = 0; i < bag.n; ++i)
    paint_instance(bag.data, static_cast<std::int64_t>(i) * bag.instance_elems(), spec,
                   bag.latents[static_cast<std::size_t>(i)], rng);
  return bag;
}

std::vector<Bag> generate_split(const GenSpec& spec, int count, std::uint64_t split_tag,
                                std::uint64_t id_base) {
  std::vector<Bag> bags;
  bags.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    Rng rng(derive_seed(spec.seed, derive_seed(split_tag, static_cast<std::uint64_t>(i))));
    const int label = i % spec.num_classes;  // class-balanced
    bags.push_back(generate_bag(spec, label, id_base + static_cast<std::uint64_t>(i), rng));
  }
  return bags;
}

}  // namespace

Dataset generate_dataset(const GenSpec& spec) {
  spec.validate();
  Dataset ds;
  ds.spec = spec;
  ds.train = generate_split(spec, spec.train_bags, 0x7261, 0);
  ds.val = generate_split(spec, spec.val_bags, 0x76a1,
                          static_cast<std::uint64_t>(spec.train_bags));
  ds.test = generate_split(spec, spec.test_bags, 0x7e57,
                           static_cast<std::uint64_t>(spec.train_bags + spec.val_bags));
  return ds;
}

int recompute_label(const Bag& bag, LabelRule rule) {
  if (rule == LabelRule::PresenceOR) {
    for (std::int32_t l : bag.latents)
      if (l >= 0) return static_cast<int>(l);
    return 0;
  }
  // majority vote, ties to the smallest class id
  int best = 0;
  std::int64_t best_votes = -1;
  for (std::int32_t l : bag.latents) {
    if (l < 0) continue;
    const std::int64_t v = std::count(bag.latents.begin(), bag.latents.end(), l);
    if (v > best_votes || (v == best_votes && l < best)) {
      best_votes = v;
      best = static_cast<int>(l);
    }
  }
  return best;
}

std::uint64_t dataset_fingerprint(const Dataset& ds) {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix_bytes = [&h](const void* p, std::size_t n) {
    const unsigned char* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 1099511628211ULL;
    }
  };
  for (const std::vector<Bag>* split : {&ds.train, &ds.val, &ds.test}) {
    for (const Bag& bag : *split) {
      mix_bytes(&bag.bag_id, sizeof(bag.bag_id));
      mix_bytes(&bag.label, sizeof(bag.label));
      mix_bytes(bag.data.data(), bag.data.size() * sizeof(float));
    }
  }
  return h;
}

}  // namespace pmil
