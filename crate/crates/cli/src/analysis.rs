use std::fs;
use std::path::{Path, PathBuf};

use crtc_core::semantics::{breakable_set, build_reference_graph, ElementKind, ElementTable, IdAllocator};
use crtc_core::toylang::{analyze, line_col, ElementPath, SourceText};

fn collect(path: &Path, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
    if path.is_dir() {
        let mut entries: Vec<PathBuf> = fs::read_dir(path)?.map(|e| e.map(|e| e.path())).collect::<Result<_, _>>()?;
        entries.sort();
        for e in entries {
            if e.is_dir() || e.extension().is_some_and(|x| x == "toy") {
                collect(&e, out)?;
            }
        }
    } else {
        out.push(path.to_path_buf());
    }
    Ok(())
}

/// Reads files named by `paths`; a directory contributes its `.toy` files.
/// Files are named by their path relative to the argument they came from.
pub fn load(paths: &[PathBuf]) -> Result<Vec<SourceText>, String> {
    let mut files = Vec::new();
    for root in paths {
        let mut found = Vec::new();
        collect(root, &mut found).map_err(|e| format!("{}: {e}", root.display()))?;
        for p in found {
            let text = fs::read_to_string(&p).map_err(|e| format!("{}: {e}", p.display()))?;
            let name = if root.is_dir() { p.strip_prefix(root).unwrap_or(&p) } else { &p };
            files.push(SourceText::new(name.to_string_lossy().into_owned(), text));
        }
    }
    Ok(files)
}

pub fn check(paths: &[PathBuf]) -> u8 {
    let files = match load(paths) {
        Ok(f) => f,
        Err(e) => {
            eprintln!("crtc: {e}");
            return 2;
        }
    };
    let analysis = analyze(&files);
    let mut all_ok = true;
    let mut sorted: Vec<&SourceText> = files.iter().collect();
    sorted.sort_by(|a, b| a.file_name.cmp(&b.file_name));
    for f in sorted {
        let diags = analysis.diagnostics.get(&f.file_name).map(Vec::as_slice).unwrap_or_default();
        if diags.is_empty() {
            println!("{}: buildable", f.file_name);
            continue;
        }
        all_ok = false;
        println!("{}: unbuildable", f.file_name);
        for d in diags {
            let (line, col) = line_col(&f.content, d.span.start);
            println!("  {}:{line}:{col}: {}: {}", f.file_name, d.code.as_str(), d.message);
        }
    }
    if all_ok {
        0
    } else {
        1
    }
}

pub fn deps(corpus: &Path, element: Option<&str>) -> u8 {
    let files = match load(&[corpus.to_path_buf()]) {
        Ok(f) => f,
        Err(e) => {
            eprintln!("crtc: {e}");
            return 2;
        }
    };
    let analysis = analyze(&files);
    if !analysis.is_buildable() {
        for (file, diags) in &analysis.diagnostics {
            for d in diags {
                eprintln!("{file}: {}: {}", d.code.as_str(), d.message);
            }
        }
        eprintln!("crtc: corpus is not buildable");
        return 2;
    }
    let table = ElementTable::initial(&analysis.asts, &mut IdAllocator::default());
    let graph = build_reference_graph(&table, &analysis.bindings);
    let wanted = match element.map(str::parse::<ElementPath>) {
        None => None,
        Some(Ok(p)) if table.id_of(&p).is_some() => Some(p),
        Some(_) => {
            eprintln!("crtc: unknown element {}", element.unwrap_or_default());
            return 2;
        }
    };
    let mut lines: Vec<String> = table
        .entries()
        .filter(|e| e.kind != ElementKind::Class)
        .filter(|e| wanted.as_ref().is_none_or(|w| *w == e.path))
        .map(|e| {
            let set = breakable_set(&graph, e.id).map(|b| b.members).unwrap_or_default();
            let mut names: Vec<String> = set.iter().filter_map(|m| table.get(*m)).map(|m| m.path.to_string()).collect();
            names.sort();
            format!("{} -> {{{}}}", e.path, names.join(", "))
        })
        .collect();
    lines.sort();
    for l in lines {
        println!("{l}");
    }
    0
}
