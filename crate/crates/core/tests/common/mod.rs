pub mod dicom_fixture;
