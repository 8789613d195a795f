#include "sspain/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "sspain/error.hpp"

namespace fs = std::filesystem;

namespace sspain {

const RescaleTable& default_rescale_table() {
    static const RescaleTable table = {0.0, 1.0, 2.0, 3.0, 4.0, 6.0};
    return table;
}

int rescale_pain(double pspi, const RescaleTable& table) {
    if (!(pspi >= 0.0 && pspi <= 15.0))
        throw RangeError("pspi " + std::to_string(pspi) + " outside [0,15]");
    if (table.size() != 6 || table[0] != 0.0)
        throw ConfigError("rescale table needs 6 increasing lower bounds starting at 0");
    for (std::size_t i = 1; i < table.size(); ++i)
        if (!(table[i] > table[i - 1]))
            throw ConfigError("rescale table needs 6 increasing lower bounds starting at 0");
    int level = 0;
    for (int j = 5; j >= 0; --j)
        if (pspi >= table[j]) { level = j; break; }
    return level;
}

const std::vector<int>& synthetic_au_ids() {
    static const std::vector<int> ids = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
    return ids;
}

std::vector<std::pair<int, int>> synthetic_landmark_grid(int image_size) {
    // Base layout on a 32x32 canvas; nearest pair 8.6 px apart.
    static const int base[10][2] = {{5, 5},   {15, 5},  {25, 5},  {10, 12}, {20, 12},
                                    {5, 19},  {15, 19}, {25, 19}, {10, 26}, {20, 26}};
    std::vector<std::pair<int, int>> grid;
    grid.reserve(10);
    for (const auto& p : base)
        grid.emplace_back((p[0] * image_size + 16) / 32, (p[1] * image_size + 16) / 32);
    return grid;
}

Tensor render_synthetic_image(int image_size, const std::vector<std::pair<int, int>>& landmarks,
                              const std::vector<double>& au_values, double noise_sigma, Rng& rng) {
    if (landmarks.size() != au_values.size())
        throw DimensionError("render_synthetic_image: landmark/value counts differ");
    Tensor img = Tensor::zeros({1, image_size, image_size});
    if (noise_sigma > 0.0)
        for (std::size_t i = 0; i < img.size(); ++i) img[i] = rng.gaussian(0.0, noise_sigma);
    const double sigma = 1.5 * image_size / 32.0;  // blob radius 3 px at size 32
    const double cutoff2 = 9.0 * sigma * sigma;
    for (std::size_t k = 0; k < landmarks.size(); ++k) {
        const double peak = au_values[k] / 5.0;
        if (peak == 0.0) continue;
        const auto [cx, cy] = landmarks[k];
        for (int y = 0; y < image_size; ++y) {
            for (int x = 0; x < image_size; ++x) {
                const double d2 = static_cast<double>(x - cx) * (x - cx) +
                                  static_cast<double>(y - cy) * (y - cy);
                if (d2 > cutoff2) continue;
                img.at3(0, y, x) += peak * std::exp(-d2 / (2.0 * sigma * sigma));
            }
        }
    }
    for (std::size_t i = 0; i < img.size(); ++i) {
        double v = std::min(1.0, std::max(0.0, img[i]));
        img[i] = std::round(v * 255.0) / 255.0;  // match the 8-bit disk format exactly
    }
    return img;
}

Dataset generate_synthetic(const SynthConfig& cfg) {
    const std::vector<int>& au_ids = synthetic_au_ids();
    if (cfg.image_size < 16) throw ConfigError("synthetic image_size must be at least 16");
    if (cfg.n_subjects < 1 || cfg.frames_per_subject < 1)
        throw ConfigError("synthetic subject/frame counts must be positive");
    if (cfg.noise_sigma < 0.0) throw ConfigError("synthetic noise_sigma must be non-negative");
    if (cfg.relevant_au_ids.empty() || cfg.relevant_au_ids.size() >= au_ids.size())
        throw ConfigError("relevant AU set must be a non-empty strict subset of the AU list");
    std::vector<bool> relevant(au_ids.size(), false);
    for (int id : cfg.relevant_au_ids) {
        auto it = std::find(au_ids.begin(), au_ids.end(), id);
        if (it == au_ids.end())
            throw ConfigError("relevant AU id " + std::to_string(id) + " not in the AU list");
        relevant[it - au_ids.begin()] = true;
    }

    Dataset ds;
    ds.au_ids = au_ids;
    Rng rng(cfg.seed);
    const std::vector<std::pair<int, int>> grid = synthetic_landmark_grid(cfg.image_size);
    const RescaleTable& bounds = default_rescale_table();

    for (int s = 0; s < cfg.n_subjects; ++s) {
        char sid[16];
        std::snprintf(sid, sizeof sid, "s%03d", s);
        ds.subjects.emplace_back(sid);
        const int dx = rng.uniform_int(3) - 1;
        const int dy = rng.uniform_int(3) - 1;
        std::vector<std::pair<int, int>> landmarks;
        for (const auto& [x, y] : grid)
            landmarks.emplace_back(std::clamp(x + dx, 0, cfg.image_size - 1),
                                   std::clamp(y + dy, 0, cfg.image_size - 1));
        for (int f = 0; f < cfg.frames_per_subject; ++f) {
            Frame fr;
            fr.subject_id = sid;
            char fid[16];
            std::snprintf(fid, sizeof fid, "f%04d", f);
            fr.frame_id = fid;
            fr.level = rng.uniform_int(6);
            fr.pspi = bounds[fr.level];
            fr.landmarks = landmarks;
            fr.au_values.resize(au_ids.size());
            for (std::size_t k = 0; k < au_ids.size(); ++k) {
                double v = relevant[k] ? fr.level + rng.gaussian(0.0, 0.3) : rng.uniform(0.0, 5.0);
                fr.au_values[k] = std::min(5.0, std::max(0.0, v));
            }
            fr.image = render_synthetic_image(cfg.image_size, landmarks, fr.au_values,
                                              cfg.noise_sigma, rng);
            ds.frames.push_back(std::move(fr));
        }
    }
    return ds;
}

std::pair<Dataset, Dataset> split_loso(const Dataset& ds, const std::string& held_out) {
    if (std::find(ds.subjects.begin(), ds.subjects.end(), held_out) == ds.subjects.end())
        throw RangeError("unknown subject: " + held_out);
    Dataset train, test;
    train.au_ids = test.au_ids = ds.au_ids;
    test.subjects = {held_out};
    for (const std::string& s : ds.subjects)
        if (s != held_out) train.subjects.push_back(s);
    for (const Frame& fr : ds.frames)
        (fr.subject_id == held_out ? test : train).frames.push_back(fr);
    return {std::move(train), std::move(test)};
}

// ---- PGM -------------------------------------------------------------------

void save_pgm(const std::string& path, const Tensor& image) {
    if (image.rank() != 3 || image.extent(0) != 1)
        throw DimensionError("save_pgm expects a [1,H,W] tensor");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path);
    const int h = image.extent(1), w = image.extent(2);
    out << "P5\n" << w << " " << h << "\n255\n";
    std::vector<unsigned char> row(static_cast<std::size_t>(w));
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double v = std::min(1.0, std::max(0.0, image.at3(0, y, x)));
            row[x] = static_cast<unsigned char>(std::lround(v * 255.0));
        }
        out.write(reinterpret_cast<const char*>(row.data()), w);
    }
    if (!out) throw IoError("write failed: " + path);
}

namespace {

// Reads one whitespace-delimited header token, skipping '#' comment lines.
std::string pgm_token(std::istream& in, const std::string& path) {
    int c = in.get();
    while (c != EOF && (std::isspace(c) || c == '#')) {
        if (c == '#')
            while (c != EOF && c != '\n') c = in.get();
        c = in.get();
    }
    std::string tok;
    while (c != EOF && !std::isspace(c)) {
        tok.push_back(static_cast<char>(c));
        c = in.get();
    }
    if (tok.empty()) throw IoError("truncated PGM header: " + path);
    return tok;
}

int pgm_int(std::istream& in, const std::string& path) {
    const std::string tok = pgm_token(in, path);
    int value = 0;
    auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), value);
    if (ec != std::errc() || p != tok.data() + tok.size() || value <= 0)
        throw IoError("bad PGM header field '" + tok + "' in " + path);
    return value;
}

}  // namespace

Tensor load_pgm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open image file: " + path);
    if (pgm_token(in, path) != "P5") throw IoError("not a binary PGM (P5): " + path);
    const int w = pgm_int(in, path);
    const int h = pgm_int(in, path);
    const int maxval = pgm_int(in, path);
    if (maxval != 255) throw IoError("unsupported PGM maxval in " + path);
    // A single whitespace byte separates the header from the raster.
    std::vector<unsigned char> raster(static_cast<std::size_t>(w) * h);
    in.read(reinterpret_cast<char*>(raster.data()), static_cast<std::streamsize>(raster.size()));
    if (in.gcount() != static_cast<std::streamsize>(raster.size()))
        throw IoError("truncated PGM raster: " + path);
    Tensor img = Tensor::zeros({1, h, w});
    for (std::size_t i = 0; i < raster.size(); ++i) img[i] = raster[i] / 255.0;
    return img;
}

// ---- CSV -------------------------------------------------------------------

namespace {

std::string format_double(double v) {
    char buf[32];
    auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
    (void)ec;
    return std::string(buf, p);
}

double parse_double(const std::string& tok, const std::string& context) {
    double v = 0.0;
    auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc() || p != tok.data() + tok.size())
        throw IoError("bad numeric field '" + tok + "' in " + context);
    return v;
}

int parse_int(const std::string& tok, const std::string& context) {
    int v = 0;
    auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc() || p != tok.data() + tok.size())
        throw IoError("bad integer field '" + tok + "' in " + context);
    return v;
}

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    for (char c : line) {
        if (c == ',') {
            cells.push_back(cell);
            cell.clear();
        } else if (c != '\r') {
            cell.push_back(c);
        }
    }
    cells.push_back(cell);
    return cells;
}

std::vector<std::vector<std::string>> read_csv(const std::string& path,
                                               const std::string& first_header) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open: " + path);
    std::vector<std::vector<std::string>> rows;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line == "\r") continue;
        rows.push_back(split_csv(line));
    }
    if (rows.empty() || rows[0].empty() || rows[0][0] != first_header)
        throw IoError("missing '" + first_header + "' header in " + path);
    return rows;
}

// Header cells "au<id>" -> ordered id list.
std::vector<int> parse_au_header(const std::vector<std::string>& header, const std::string& path) {
    std::vector<int> ids;
    for (std::size_t i = 1; i < header.size(); ++i) {
        const std::string& h = header[i];
        if (h.rfind("au", 0) != 0) throw IoError("bad AU column '" + h + "' in " + path);
        ids.push_back(parse_int(h.substr(2), path));
    }
    return ids;
}

}  // namespace

Dataset load_dataset(const std::string& root, const RescaleTable& table) {
    if (!fs::is_directory(root)) throw IoError("dataset root not found: " + root);
    Dataset ds;
    std::vector<std::string> subjects;
    for (const auto& entry : fs::directory_iterator(root))
        if (entry.is_directory()) subjects.push_back(entry.path().filename().string());
    std::sort(subjects.begin(), subjects.end());

    for (const std::string& subject : subjects) {
        const fs::path dir = fs::path(root) / subject;
        const std::string labels_path = (dir / "labels.csv").string();
        const std::string aus_path = (dir / "aus.csv").string();
        const std::string lms_path = (dir / "landmarks.csv").string();

        auto labels = read_csv(labels_path, "frame_id");
        auto aus = read_csv(aus_path, "frame_id");
        auto lms = read_csv(lms_path, "frame_id");

        std::vector<int> au_ids = parse_au_header(aus[0], aus_path);
        std::vector<int> lm_ids;
        if ((lms[0].size() - 1) % 2 != 0)
            throw IoError("landmark columns must come in _x,_y pairs in " + lms_path);
        for (std::size_t i = 1; i < lms[0].size(); i += 2) {
            const std::string &hx = lms[0][i], &hy = lms[0][i + 1];
            if (hx.rfind("au", 0) != 0 || hx.size() < 4 || hx.substr(hx.size() - 2) != "_x" ||
                hy != hx.substr(0, hx.size() - 2) + "_y")
                throw IoError("bad landmark columns '" + hx + "','" + hy + "' in " + lms_path);
            lm_ids.push_back(parse_int(hx.substr(2, hx.size() - 4), lms_path));
        }
        if (au_ids != lm_ids)
            throw IoError("inconsistent AU columns between " + aus_path + " and " + lms_path);
        if (ds.au_ids.empty() && ds.subjects.empty())
            ds.au_ids = au_ids;
        else if (au_ids != ds.au_ids)
            throw IoError("inconsistent AU columns across subjects in " + aus_path);

        std::map<std::string, std::vector<std::string>> au_rows, lm_rows;
        for (std::size_t r = 1; r < aus.size(); ++r) au_rows[aus[r][0]] = aus[r];
        for (std::size_t r = 1; r < lms.size(); ++r) lm_rows[lms[r][0]] = lms[r];

        std::map<std::string, bool> labeled;
        for (std::size_t r = 1; r < labels.size(); ++r) {
            if (labels[r].size() != 2)
                throw IoError("labels row needs frame_id,pspi in " + labels_path);
            const std::string frame_id = labels[r][0];
            labeled[frame_id] = true;
            Frame fr;
            fr.subject_id = subject;
            fr.frame_id = frame_id;
            fr.pspi = parse_double(labels[r][1], labels_path);
            fr.level = rescale_pain(fr.pspi, table);
            fr.image = load_pgm((dir / "frames" / (frame_id + ".pgm")).string());

            auto ar = au_rows.find(frame_id);
            if (ar == au_rows.end() || ar->second.size() != au_ids.size() + 1)
                throw IoError("no AU row for frame " + frame_id + " in " + aus_path);
            for (std::size_t k = 1; k < ar->second.size(); ++k)
                fr.au_values.push_back(parse_double(ar->second[k], aus_path));

            auto lr = lm_rows.find(frame_id);
            if (lr == lm_rows.end() || lr->second.size() != 2 * au_ids.size() + 1)
                throw IoError("no landmark row for frame " + frame_id + " in " + lms_path);
            for (std::size_t k = 1; k < lr->second.size(); k += 2) {
                int x = parse_int(lr->second[k], lms_path);
                int y = parse_int(lr->second[k + 1], lms_path);
                if (x < 0 || x >= fr.image.extent(2) || y < 0 || y >= fr.image.extent(1))
                    throw RangeError("landmark (" + std::to_string(x) + "," + std::to_string(y) +
                                     ") outside image for frame " + frame_id);
                fr.landmarks.emplace_back(x, y);
            }
            ds.frames.push_back(std::move(fr));
        }
        ds.subjects.push_back(subject);

        const fs::path frames_dir = dir / "frames";
        if (fs::is_directory(frames_dir))
            for (const auto& entry : fs::directory_iterator(frames_dir))
                if (entry.path().extension() == ".pgm" &&
                    !labeled.count(entry.path().stem().string()))
                    throw IoError("no label row for frame " + entry.path().stem().string() +
                                  " in " + labels_path);
    }
    return ds;
}

void save_dataset(const Dataset& ds, const std::string& root) {
    for (const std::string& subject : ds.subjects) {
        const fs::path dir = fs::path(root) / subject;
        fs::create_directories(dir / "frames");
        std::ofstream labels((dir / "labels.csv").string());
        std::ofstream aus((dir / "aus.csv").string());
        std::ofstream lms((dir / "landmarks.csv").string());
        if (!labels || !aus || !lms) throw IoError("cannot write CSVs under " + dir.string());
        labels << "frame_id,pspi\n";
        aus << "frame_id";
        lms << "frame_id";
        for (int id : ds.au_ids) {
            aus << ",au" << id;
            lms << ",au" << id << "_x,au" << id << "_y";
        }
        aus << "\n";
        lms << "\n";
        for (const Frame& fr : ds.frames) {
            if (fr.subject_id != subject) continue;
            labels << fr.frame_id << "," << format_double(fr.pspi) << "\n";
            aus << fr.frame_id;
            for (double v : fr.au_values) aus << "," << format_double(v);
            aus << "\n";
            lms << fr.frame_id;
            for (const auto& [x, y] : fr.landmarks) lms << "," << x << "," << y;
            lms << "\n";
            save_pgm((dir / "frames" / (fr.frame_id + ".pgm")).string(), fr.image);
        }
    }
}

}  // namespace sspain
