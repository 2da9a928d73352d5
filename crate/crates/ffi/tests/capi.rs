use std::ffi::{CStr, CString};
use std::path::Path;
use std::ptr;

use detgp::checkpoint::{save_checkpoint, Checkpoint, StoredGraph};
use detgp::graph::Graph;
use detgp::model::{seeded_rng, DetGPModel, ModelConfig};
use detgp::text::{tokenize, Vocabulary};
use detgp_ffi::*;
use tempfile::TempDir;

fn write_checkpoint(dir: &Path) -> (Checkpoint, Vec<f64>) {
    let texts: Vec<String> = ["graph kernel", "sparse process", "kernel text", "words"]
        .map(String::from)
        .to_vec();
    let corpus: Vec<Vec<String>> = texts.iter().map(|t| tokenize(t)).collect();
    let vocab = Vocabulary::build(&corpus, 1).unwrap();
    let cfg = ModelConfig {
        d_text: 5,
        d_struct: 3,
        hops: 2,
        inducing: 2,
        ..ModelConfig::default()
    };
    let mut model = DetGPModel::new(vocab, &cfg, &mut seeded_rng(1, 0)).unwrap();
    model.inducing.z[[0, 0]] = 0.3;
    let ids = ["a", "b", "c", "d"].map(String::from).to_vec();
    let graph = Graph::new(ids, &[(0, 1), (1, 2)]).unwrap();
    let h = model.forward(&graph, &model.tokenize(&texts)).unwrap();
    let mut ckpt = Checkpoint::new(model);
    ckpt.graph = Some(StoredGraph { graph, texts });
    save_checkpoint(&ckpt, dir).unwrap();
    (ckpt, h.iter().copied().collect())
}

fn cstr(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn last_error() -> String {
    let p = detgp_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn load(dir: &Path) -> *mut DetgpModel {
    let mut handle = ptr::null_mut();
    let path = cstr(dir.to_str().unwrap());
    assert_eq!(unsafe { detgp_model_load(path.as_ptr(), &mut handle) }, DetgpStatus::Ok);
    handle
}

#[test]
fn load_query_and_free() {
    let d = TempDir::new().unwrap();
    let (_, expected) = write_checkpoint(d.path());
    let m = load(d.path());
    unsafe {
        assert_eq!(detgp_model_num_nodes(m), 4);
        assert_eq!(detgp_model_embedding_dim(m), 8);
        let mut buf = vec![0.0; 32];
        assert_eq!(detgp_model_embeddings(m, buf.as_mut_ptr(), buf.len()), DetgpStatus::Ok);
        assert_eq!(buf, expected);
        let mut row = vec![0.0; 8];
        let id = cstr("c");
        assert_eq!(detgp_model_node_embedding(m, id.as_ptr(), row.as_mut_ptr(), 8), DetgpStatus::Ok);
        assert_eq!(row, expected[16..24]);
        assert_eq!(
            detgp_model_embeddings(m, buf.as_mut_ptr(), 10),
            DetgpStatus::BufferTooSmall
        );
        assert!(last_error().contains("need 32"));
        detgp_model_free(m);
        detgp_model_free(ptr::null_mut());
        assert_eq!(detgp_model_num_nodes(ptr::null()), 0);
    }
}

#[test]
fn insert_node_extends_graph_without_moving_isolated_rows() {
    let d = TempDir::new().unwrap();
    let (_, before) = write_checkpoint(d.path());
    let m = load(d.path());
    unsafe {
        let id = cstr("e");
        let text = cstr("kernel unseenword");
        let nb = [cstr("d")];
        let nbs: Vec<*const std::ffi::c_char> = nb.iter().map(|s| s.as_ptr()).collect();
        assert_eq!(
            detgp_model_insert_node(m, id.as_ptr(), text.as_ptr(), nbs.as_ptr(), 1),
            DetgpStatus::Ok
        );
        assert_eq!(detgp_model_num_nodes(m), 5);
        let mut buf = vec![0.0; 40];
        assert_eq!(detgp_model_embeddings(m, buf.as_mut_ptr(), 40), DetgpStatus::Ok);
        // a, b, c are not connected to the new node or to d
        assert_eq!(buf[..24], before[..24]);

        assert_eq!(
            detgp_model_insert_node(m, id.as_ptr(), text.as_ptr(), ptr::null(), 0),
            DetgpStatus::Graph
        );
        assert!(last_error().contains("already exists"));

        let out = d.path().join("grown");
        let path = cstr(out.to_str().unwrap());
        assert_eq!(detgp_model_save(m, path.as_ptr()), DetgpStatus::Ok);
        detgp_model_free(m);
        let again = load(&out);
        assert_eq!(detgp_model_num_nodes(again), 5);
        detgp_model_free(again);
    }
}

#[test]
fn load_errors_map_to_status_codes() {
    let d = TempDir::new().unwrap();
    let mut handle = ptr::null_mut();
    let missing = cstr(d.path().join("nope").to_str().unwrap());
    unsafe {
        assert_eq!(detgp_model_load(missing.as_ptr(), &mut handle), DetgpStatus::Io);
        assert!(handle.is_null());
        assert_eq!(detgp_model_load(ptr::null(), &mut handle), DetgpStatus::NullArgument);
    }
    write_checkpoint(d.path());
    let manifest = d.path().join("manifest.json");
    let raw = std::fs::read_to_string(&manifest).unwrap();
    std::fs::write(&manifest, raw.replace("\"format_version\": 1", "\"format_version\": 9")).unwrap();
    let path = cstr(d.path().to_str().unwrap());
    unsafe {
        assert_eq!(detgp_model_load(path.as_ptr(), &mut handle), DetgpStatus::Format);
    }
    assert!(last_error().contains("version 9"));
}

#[test]
fn auc_through_the_c_abi() {
    let pos = [0.8, 0.3];
    let neg = [0.5, 0.1];
    let mut out = 0.0;
    unsafe {
        assert_eq!(detgp_auc(pos.as_ptr(), 2, neg.as_ptr(), 2, &mut out), DetgpStatus::Ok);
        assert_eq!(out, 0.75);
        assert_eq!(detgp_auc(pos.as_ptr(), 0, neg.as_ptr(), 2, &mut out), DetgpStatus::InvalidArgument);
    }
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("include/detgp.h")).unwrap();
    for name in [
        "detgp_model_load",
        "detgp_model_save",
        "detgp_model_free",
        "detgp_model_num_nodes",
        "detgp_model_embedding_dim",
        "detgp_model_embeddings",
        "detgp_model_node_embedding",
        "detgp_model_insert_node",
        "detgp_auc",
        "detgp_last_error_message",
        "DETGP_STATUS_BUFFER_TOO_SMALL",
        "typedef struct DetgpModel DetgpModel",
    ] {
        assert!(header.contains(name), "{name} missing from header");
    }
}

#[test]
fn header_compiles_as_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/detgp.h");
    let Ok(status) = std::process::Command::new("cc")
        .args(["-fsyntax-only", "-Wall", "-Werror", "-x", "c"])
        .arg(&header)
        .status()
    else {
        eprintln!("no C compiler on PATH; header syntax not checked");
        return;
    };
    assert!(status.success());
}
