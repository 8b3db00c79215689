#include "dcp/vocabulary.hpp"

#include <array>
#include <fstream>

#include "dcp/error.hpp"

namespace dcp {

namespace {

constexpr std::array<const char*, 64> kNames = {
    "person",   "bicycle",  "car",       "motorcycle", "airplane", "bus",      "train",     "truck",
    "boat",     "bird",     "cat",       "dog",        "horse",    "sheep",    "cow",       "elephant",
    "bear",     "zebra",    "giraffe",   "umbrella",   "bottle",   "cup",      "bowl",      "banana",
    "apple",    "orange",   "broccoli",  "carrot",     "pizza",    "cake",     "chair",     "couch",
    "bed",      "table",    "toilet",    "tv",         "laptop",   "keyboard", "book",      "clock",
    "vase",     "sky",      "grass",     "tree",       "road",     "sand",     "sea",       "river",
    "mountain", "snow",     "wall",      "floor",      "ceiling",  "window",   "door",      "fence",
    "building", "bridge",   "rock",      "dirt",       "water",    "cloud",    "pavement",  "leaves",
};

}  // namespace

std::vector<std::string> default_vocabulary(std::size_t n) {
    if (n == 0 || n > kNames.size()) throw ConfigError("default vocabulary holds between 1 and 64 names");
    return {kNames.begin(), kNames.begin() + static_cast<std::ptrdiff_t>(n)};
}

std::vector<std::string> read_name_list(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open name list '" + path + "'");
    std::vector<std::string> names;
    std::string line;
    while (std::getline(in, line)) {
        while (!line.empty() && (line.back() == '\r' || line.back() == ' ' || line.back() == '\t')) line.pop_back();
        std::size_t start = line.find_first_not_of(" \t");
        if (start == std::string::npos || line[start] == '#') continue;
        names.push_back(line.substr(start));
    }
    return names;
}

}  // namespace dcp
