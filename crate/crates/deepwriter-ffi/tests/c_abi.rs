//! Exercises the C ABI through the exported extern functions, including the
//! error paths and the generated header artifact.

use std::ffi::{c_char, CString};
use std::ptr;

use deepwriter::data::checkpoint::{save_checkpoint, Checkpoint};
use deepwriter::data::image_io::write_pgm;
use deepwriter::model::{ArchitectureSpec, Network};
use deepwriter::patching::GrayImage;
use deepwriter_ffi::{
    dw_identify_file, dw_last_error_message, dw_model_free, dw_model_load, dw_model_num_classes,
    DwStatus,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn last_error() -> String {
    let mut buf = vec![0u8; 512];
    let n = unsafe { dw_last_error_message(buf.as_mut_ptr() as *mut c_char, buf.len()) };
    buf.truncate(n.min(buf.len() - 1));
    String::from_utf8(buf).unwrap()
}

fn write_fixture(dir: &std::path::Path) -> (std::path::PathBuf, std::path::PathBuf) {
    let spec = ArchitectureSpec::deepwriter(33, 3, 0.125);
    let net: Network<f32> = Network::build(spec, 1, 42).unwrap();
    let ckpt = Checkpoint::from_network(
        &net,
        vec!["ann".into(), "bob".into(), "cleo".into()],
        0,
        None,
    );
    let model_path = dir.join("model.dwck");
    save_checkpoint(&ckpt, &model_path).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (w, h) = (120, 40);
    let pixels = (0..w * h).map(|_| rng.gen()).collect();
    let image_path = dir.join("sample.pgm");
    write_pgm(&GrayImage::new(w, h, pixels).unwrap(), &image_path).unwrap();
    (model_path, image_path)
}

#[test]
fn load_identify_free_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (model_path, image_path) = write_fixture(dir.path());

    let c_model = CString::new(model_path.to_str().unwrap()).unwrap();
    let mut handle = ptr::null_mut();
    let status = unsafe { dw_model_load(c_model.as_ptr(), &mut handle) };
    assert_eq!(status, DwStatus::DwOk);
    assert!(!handle.is_null());
    assert_eq!(unsafe { dw_model_num_classes(handle) }, 3);

    let c_image = CString::new(image_path.to_str().unwrap()).unwrap();
    let mut writer = u32::MAX;
    let mut confidence = -1.0f32;
    let mut label = vec![0u8; 64];
    let status = unsafe {
        dw_identify_file(
            handle,
            c_image.as_ptr(),
            1.0,
            &mut writer,
            &mut confidence,
            label.as_mut_ptr() as *mut c_char,
            label.len(),
        )
    };
    assert_eq!(status, DwStatus::DwOk);
    assert!(writer < 3);
    assert!(confidence > 0.0 && confidence <= 1.0);
    let nul = label.iter().position(|&b| b == 0).unwrap();
    let label = std::str::from_utf8(&label[..nul]).unwrap();
    assert!(["ann", "bob", "cleo"].contains(&label), "{label}");

    // identical call, identical result: scoring consumes no randomness
    let mut writer2 = 0u32;
    let mut confidence2 = 0.0f32;
    let status = unsafe {
        dw_identify_file(
            handle,
            c_image.as_ptr(),
            1.0,
            &mut writer2,
            &mut confidence2,
            ptr::null_mut(),
            0,
        )
    };
    assert_eq!(status, DwStatus::DwOk);
    assert_eq!((writer, confidence), (writer2, confidence2));

    unsafe { dw_model_free(handle) };
}

#[test]
fn missing_model_reports_io_error() {
    let c_path = CString::new("/nonexistent/model.dwck").unwrap();
    let mut handle = ptr::null_mut();
    let status = unsafe { dw_model_load(c_path.as_ptr(), &mut handle) };
    assert_eq!(status, DwStatus::DwIoError);
    assert!(handle.is_null());
    assert!(last_error().contains("model.dwck"), "{}", last_error());
}

#[test]
fn corrupted_model_reports_format_error() {
    let dir = tempfile::tempdir().unwrap();
    let (model_path, _) = write_fixture(dir.path());
    let mut bytes = std::fs::read(&model_path).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0xFF;
    std::fs::write(&model_path, bytes).unwrap();

    let c_path = CString::new(model_path.to_str().unwrap()).unwrap();
    let mut handle = ptr::null_mut();
    let status = unsafe { dw_model_load(c_path.as_ptr(), &mut handle) };
    assert_eq!(status, DwStatus::DwFormatError);
    assert!(last_error().contains("checksum"), "{}", last_error());
}

#[test]
fn null_arguments_rejected() {
    let mut handle = ptr::null_mut();
    assert_eq!(
        unsafe { dw_model_load(ptr::null(), &mut handle) },
        DwStatus::DwInvalidArgument
    );
    assert_eq!(
        unsafe {
            dw_identify_file(
                ptr::null(),
                ptr::null(),
                0.1,
                ptr::null_mut(),
                ptr::null_mut(),
                ptr::null_mut(),
                0,
            )
        },
        DwStatus::DwInvalidArgument
    );
    assert_eq!(unsafe { dw_model_num_classes(ptr::null()) }, 0);
    unsafe { dw_model_free(ptr::null_mut()) }; // must be a safe no-op
}

#[test]
fn header_is_generated_with_exports() {
    let header = std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("include")
        .join("deepwriter.h");
    let text = std::fs::read_to_string(&header).expect("generated header");
    for symbol in [
        "dw_model_load",
        "dw_model_free",
        "dw_model_num_classes",
        "dw_identify_file",
        "dw_last_error_message",
        "DwStatus",
    ] {
        assert!(text.contains(symbol), "header missing {symbol}");
    }
}
