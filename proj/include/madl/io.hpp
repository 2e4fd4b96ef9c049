#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "madl/data.hpp"
#include "madl/training.hpp"

namespace madl::io {

namespace fs = std::filesystem;

// Numeric CSV with a header row. Values are written with 17 significant
// digits, so doubles round-trip exactly.
struct Table {
  std::vector<std::string> header;
  Matrix values;
};

// Throws ParseError naming the file, 1-based row and column on malformed input.
Table read_csv(const fs::path& path);
void write_csv(const fs::path& path, const std::vector<std::string>& header, const Matrix& values);

// Header of the form prefix1..prefixK.
std::vector<std::string> numbered_header(const std::string& prefix, std::size_t count);

// Dataset directory layout:
//   instances.csv          x1..xD
//   labels.csv             y (1-based, optional)
//   annotations.csv        z1..zM (1-based, -1 missing)
//   annotations_full.csv   z1..zM before ratio masking (optional)
//   annotators.csv         a1..aO
//   dataset.json           num_classes and simulation metadata (optional)
void write_dataset(const fs::path& dir, const Dataset& data);
// Number of classes comes from dataset.json when present, else the largest
// label seen.
Dataset read_dataset(const fs::path& dir);

void write_annotators(const fs::path& path, const Matrix& features);
Matrix read_annotators(const fs::path& path);

// UCI letter-recognition format: "<letter>,<16 integers>" per line. Letters
// map to classes A=0..Z=25; attributes (0..15) are scaled to [0, 1].
Dataset read_letter(const fs::path& path);

// Flat key=value text; '#' starts a comment, blank lines are skipped.
using KeyValues = std::map<std::string, std::string>;
KeyValues parse_key_values(const std::string& text, const std::string& source = "<string>");
KeyValues read_key_values(const fs::path& path);
std::string format_key_values(const KeyValues& kv);

KeyValues model_spec_to_kv(const ModelSpec& spec);
ModelSpec model_spec_from_kv(const KeyValues& kv);

// Binary checkpoint: magic, version, key-value metadata (model spec plus
// `extra`), then every parameter as (name, shape, raw float64 values).
void save_checkpoint(const fs::path& path, const MadlModel& model, const KeyValues& extra = {});

struct Checkpoint {
  MadlModel model;
  KeyValues meta;
};
Checkpoint load_checkpoint(const fs::path& path);

}  // namespace madl::io
